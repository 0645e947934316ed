"""Character-free background crops harvested around real plates."""

from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, EmptyBank, NoRoom, PartialHarvest, ShapeMismatch
from .imaging import crop, load_png, resize, save_png

MANIFEST_NAME = "bank.jsonl"
ATTEMPTS_PER_CROP = 100

Rect = tuple[int, int, int, int]  # x, y, w, h


@dataclass
class BackgroundTemplate:
    pixels: np.ndarray = field(repr=False)
    source_id: str
    region: Rect


@dataclass(frozen=True)
class BankEntry:
    path: str  # relative to the bank directory
    source_id: str
    region: Rect
    size: tuple[int, int]  # stored pixel (H, W)
    sha256: str

    def sort_key(self):
        return (self.source_id, self.region, self.path)


@dataclass
class BankManifest:
    entries: list[BankEntry]
    root: Path

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, BankManifest) and self.entries == other.entries


def interior_disjoint(a: Rect, b: Rect) -> bool:
    """True when the open interiors of two rectangles do not meet (shared edges are fine)."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax + aw <= bx or bx + bw <= ax or ay + ah <= by or by + bh <= ay


def _has_room(image_hw, plate_bbox: Rect, crop_hw) -> bool:
    H, W = image_hw
    h, w = crop_hw
    if h > H or w > W:
        return False
    bx, by, bw, bh = plate_bbox
    return bx >= w or W - (bx + bw) >= w or by >= h or H - (by + bh) >= h


def harvest_templates(
    image: np.ndarray,
    plate_bbox: Rect,
    count: int,
    crop_size: tuple[int, int] = (256, 256),
    seed=0,
    source_id: str = "",
    out_size: tuple[int, int] | None = None,
) -> list[BackgroundTemplate]:
    """Rejection-sample ``count`` crops that stay clear of the plate box.

    ``crop_size`` and ``out_size`` are ``(H, W)``; crops are resampled
    bilinearly to ``out_size`` (default: ``crop_size``). Crops may overlap
    each other.
    """
    H, W = image.shape[:2]
    h, w = crop_size
    if not _has_room((H, W), plate_bbox, (h, w)):
        raise NoRoom(f"no {h}x{w} crop fits in a {H}x{W} image outside plate box {plate_bbox}")
    out_size = tuple(out_size or crop_size)
    rng = np.random.default_rng(seed)
    found = []
    for _ in range(ATTEMPTS_PER_CROP * count):
        if len(found) == count:
            break
        x = int(rng.integers(0, W - w + 1))
        y = int(rng.integers(0, H - h + 1))
        region = (x, y, w, h)
        if interior_disjoint(region, plate_bbox):
            pixels = resize(crop(image, region), out_size, "bilinear")
            found.append(BackgroundTemplate(pixels, source_id, region))
    if len(found) < count:
        raise PartialHarvest(f"found {len(found)} of {count} crops within the attempt budget", found)
    return found


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_bank(templates, directory) -> BankManifest:
    """Write one PNG per template plus ``bank.jsonl`` and return the manifest."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    ordered = sorted(templates, key=lambda t: (t.source_id, tuple(t.region)))
    entries = []
    for i, tpl in enumerate(ordered):
        rel = f"{i:06d}.png"
        save_png(root / rel, tpl.pixels)
        entries.append(
            BankEntry(rel, tpl.source_id, tuple(int(v) for v in tpl.region), tpl.pixels.shape[:2], _sha256(root / rel))
        )
    with open(root / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        for e in entries:
            x, y, w, h = e.region
            fh.write(json.dumps({
                "path": e.path, "source_id": e.source_id, "x": x, "y": y, "w": w, "h": h,
                "height": e.size[0], "width": e.size[1], "sha256": e.sha256,
            }, ensure_ascii=False) + "\n")
    return BankManifest(entries, root)


def load_bank(directory, verify: bool = True) -> BankManifest:
    root = Path(directory)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no bank manifest at {manifest}")
    entries = []
    with open(manifest, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            entry = BankEntry(
                r["path"], r["source_id"], (r["x"], r["y"], r["w"], r["h"]), (r["height"], r["width"]), r["sha256"]
            )
            path = root / entry.path
            if not path.exists():
                raise FileNotFoundError(f"bank entry references missing file {path}")
            if verify and _sha256(path) != entry.sha256:
                raise ChecksumMismatch(f"checksum mismatch for {path}")
            entries.append(entry)
    entries.sort(key=BankEntry.sort_key)
    return BankManifest(entries, root)


@functools.lru_cache(maxsize=4096)
def _load_cached(path: str) -> np.ndarray:
    pixels = load_png(path)
    pixels.setflags(write=False)
    return pixels


def load_template(bank: BankManifest, index: int) -> BackgroundTemplate:
    entry = bank.entries[index]
    pixels = _load_cached(str(bank.root / entry.path))
    if pixels.shape[:2] != tuple(entry.size):
        raise ShapeMismatch(f"{entry.path} decodes to {pixels.shape[:2]}, manifest says {entry.size}")
    return BackgroundTemplate(pixels, entry.source_id, entry.region)


def sample_index(bank: BankManifest, seed) -> int:
    if not bank.entries:
        raise EmptyBank("background bank is empty")
    return int(np.random.default_rng(seed).integers(len(bank.entries)))


def sample_template(bank: BankManifest, seed) -> BackgroundTemplate:
    """Uniform draw over the bank's entries."""
    return load_template(bank, sample_index(bank, seed))
