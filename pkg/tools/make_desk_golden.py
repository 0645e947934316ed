"""Regenerate tests/data/desk_golden.npz (run once; the file is checked in)."""

from pathlib import Path

import numpy as np

from elpr.metrics import DeskExtractor

OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "desk_golden.npz"


def golden_images():
    rng = np.random.default_rng(2024)
    shapes = [(64, 64), (96, 48), (128, 160), (30, 70)]
    return [rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8) for h, w in shapes]


def main():
    images = golden_images()
    ext = DeskExtractor(0)
    vectors = np.stack([ext(im) for im in images])
    arrays = {f"image{i}": im for i, im in enumerate(images)}
    OUT.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(OUT, vectors=vectors, extractor_id=np.array(ext.extractor_id), **arrays)
    print(f"wrote {OUT} ({vectors.shape})")


if __name__ == "__main__":
    main()
