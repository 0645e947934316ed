"""Small PNG and resampling helpers; every image is ``uint8`` RGB ``(H, W, 3)``."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_png(path, pixels: np.ndarray) -> None:
    # No metadata and a pinned compression level keep the bytes reproducible.
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "L" if pixels.ndim == 2 else "RGB"
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode=mode).save(
        path, format="PNG", optimize=False, compress_level=6
    )


def resize(pixels: np.ndarray, size: tuple[int, int], method: str = "bilinear") -> np.ndarray:
    """Resize to ``size = (H, W)``; aspect ratio is not preserved."""
    h, w = size
    if pixels.shape[:2] == (h, w):
        return pixels.copy()
    resample = {"bilinear": Image.BILINEAR, "nearest": Image.NEAREST}[method]
    mode = "L" if pixels.ndim == 2 else "RGB"
    out = Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode=mode).resize((w, h), resample)
    return np.asarray(out, dtype=np.uint8).copy()


def crop(pixels: np.ndarray, region: tuple[int, int, int, int]) -> np.ndarray:
    x, y, w, h = region
    return pixels[y:y + h, x:x + w].copy()
