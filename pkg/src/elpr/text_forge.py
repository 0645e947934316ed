"""Controllable text-image construction, mask extraction and the Script baseline.

A text image is built by stamping augmented character bitmaps from the
bundled atlas into the slots of a layout preset over a uniform blue canvas.
The mask image is whatever differs from that blue canvas.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    BadWeights,
    EmptyGlyph,
    LayoutError,
    RangeError,
    ShapeMismatch,
    SlotOverflow,
    TooManyGlyphs,
)

BLUE = (0, 0, 255)
INK = (255, 255, 255)
MASK_TOLERANCE = 8
CANVAS = (256, 512)

# Plate grammar: province, one letter, five alphanumerics; I and O never appear.
LETTERS = "ABCDEFGHJKLMNPQRSTUVWXYZ"
ALPHANUMERICS = LETTERS + "0123456789"

_SQUARE = np.ones((3, 3), dtype=bool)


def seed_sequence(seed) -> np.random.SeedSequence:
    """Accept an int, a sequence of ints or an existing SeedSequence."""
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


@dataclass(frozen=True)
class Glyph:
    char_id: str
    bitmap: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.bitmap.ndim != 2:
            raise ShapeMismatch(f"glyph bitmap must be 2-D, got {self.bitmap.shape}")

    @property
    def height_px(self) -> int:
        return self.bitmap.shape[0]

    @property
    def width_px(self) -> int:
        return self.bitmap.shape[1]

    @property
    def support(self) -> np.ndarray:
        return self.bitmap > 0


@dataclass(frozen=True)
class AugmentRanges:
    """Inclusive ranges for glyph width, height and morphology radius."""

    width: tuple[int, int] = (30, 60)
    height: tuple[int, int] = (60, 120)
    morph: tuple[int, int] = (-2, 2)

    def __post_init__(self):
        for name in ("width", "height", "morph"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise RangeError(f"{name} range is inverted: ({lo}, {hi})")
        if self.width[0] < 1 or self.height[0] < 1:
            raise RangeError("glyph dimensions must be positive")

    def clipped(self, max_w: int, max_h: int) -> "AugmentRanges":
        """Same ranges with the upper size bounds clipped to a slot."""
        return AugmentRanges(
            width=(self.width[0], min(self.width[1], max_w)),
            height=(self.height[0], min(self.height[1], max_h)),
            morph=self.morph,
        )


@dataclass(frozen=True)
class LayoutPreset:
    preset_id: str
    rows: int
    slots: tuple[tuple[int, int, int, int], ...]
    canvas: tuple[int, int] = CANVAS

    def __post_init__(self):
        if self.rows not in (1, 2):
            raise LayoutError(f"{self.preset_id}: rows must be 1 or 2")
        H, W = self.canvas
        for i, (x, y, w, h) in enumerate(self.slots):
            if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > W or y + h > H:
                raise LayoutError(f"{self.preset_id}: slot {i} lies outside the {H}x{W} canvas")
        for i, a in enumerate(self.slots):
            for j in range(i + 1, len(self.slots)):
                if _rects_overlap(a, self.slots[j]):
                    raise LayoutError(f"{self.preset_id}: slots {i} and {j} overlap")


@dataclass
class TextImage:
    pixels: np.ndarray = field(repr=False)
    blue_color: tuple[int, int, int]
    label: str
    layout_id: str


@dataclass
class MaskImage:
    pixels: np.ndarray = field(repr=False)
    support: np.ndarray = field(repr=False)  # (H, W) bool


def _rects_overlap(a, b) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


# ---------------------------------------------------------------- data files


def _data_path(name: str) -> Path:
    return Path(str(resources.files("elpr") / "data" / name))


@functools.lru_cache(maxsize=None)
def load_atlas(directory: str | None = None) -> dict[str, Glyph]:
    """Load the glyph atlas (one grayscale PNG per character plus ``index.json``)."""
    root = Path(directory) if directory else _data_path("glyphs")
    with open(root / "index.json", encoding="utf-8") as fh:
        index = json.load(fh)["glyphs"]
    atlas = {}
    for char, filename in index.items():
        with Image.open(root / filename) as im:
            bitmap = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
        atlas[char] = Glyph(char, bitmap)
    return atlas


def load_layouts(path: str | None = None) -> tuple[LayoutPreset, ...]:
    src = Path(path) if path else _data_path("layouts.json")
    with open(src, encoding="utf-8") as fh:
        raw = json.load(fh)["presets"]
    return tuple(
        LayoutPreset(
            preset_id=p["preset_id"],
            rows=int(p["rows"]),
            slots=tuple(tuple(int(v) for v in s) for s in p["slots"]),
            canvas=tuple(p.get("canvas", CANVAS)),
        )
        for p in raw
    )


@functools.lru_cache(maxsize=None)
def default_layouts() -> tuple[LayoutPreset, ...]:
    return load_layouts()


@functools.lru_cache(maxsize=None)
def load_provinces(path: str | None = None) -> tuple[str, ...]:
    src = Path(path) if path else _data_path("provinces.json")
    with open(src, encoding="utf-8") as fh:
        return tuple(p["char"] for p in json.load(fh)["provinces"])


# ---------------------------------------------------------------- glyph ops


def morph(support: np.ndarray, k: int) -> np.ndarray:
    """Dilate (k > 0) or erode (k < 0) a boolean support by |k| pixels, 8-neighborhood."""
    if k == 0:
        return support.copy()
    if k > 0:
        return ndimage.binary_dilation(support, structure=_SQUARE, iterations=k)
    return ndimage.binary_erosion(support, structure=_SQUARE, iterations=-k, border_value=0)


def augment_glyph(
    glyph: Glyph,
    seed: int,
    ranges: AugmentRanges = AugmentRanges(),
    *,
    size: tuple[int, int] | None = None,
    morph_px: int | None = None,
) -> Glyph:
    """Randomly resize a glyph and grow or shrink its strokes.

    ``size = (w, h)`` and ``morph_px`` pin the random draws. The result is a
    binary bitmap. When an erosion would wipe out every stroke the radius is
    reduced until something survives.
    """
    if not glyph.support.any():
        raise EmptyGlyph(f"glyph {glyph.char_id!r} has no coverage")
    rng = np.random.default_rng(seed)
    w = int(rng.integers(ranges.width[0], ranges.width[1] + 1))
    h = int(rng.integers(ranges.height[0], ranges.height[1] + 1))
    k = int(rng.integers(ranges.morph[0], ranges.morph[1] + 1))
    if size is not None:
        w, h = size
    if morph_px is not None:
        k = morph_px

    if (h, w) == glyph.bitmap.shape:
        support = glyph.support
    else:
        coverage = Image.fromarray(np.round(np.clip(glyph.bitmap, 0, 1) * 255).astype(np.uint8), "L")
        support = np.asarray(coverage.resize((w, h), Image.BILINEAR)) >= 128
        if not support.any():
            raise EmptyGlyph(f"glyph {glyph.char_id!r} vanished when resized to {w}x{h}")

    out = morph(support, k)
    while not out.any():
        k += 1
        out = morph(support, k)
    return Glyph(glyph.char_id, out.astype(np.float32))


# ---------------------------------------------------------------- composition


def blank_canvas(canvas: tuple[int, int] = CANVAS, blue_color=BLUE) -> np.ndarray:
    H, W = canvas
    out = np.empty((H, W, 3), dtype=np.uint8)
    out[:] = np.asarray(blue_color, dtype=np.uint8)
    return out


def slot_origin(glyph: Glyph, slot) -> tuple[int, int]:
    """Top-left pixel at which ``glyph`` is stamped when centered in ``slot``."""
    x, y, w, h = slot
    return x + (w - glyph.width_px) // 2, y + (h - glyph.height_px) // 2


def compose_text_image(
    glyphs: Sequence[Glyph],
    layout: LayoutPreset,
    canvas: tuple[int, int] = CANVAS,
    blue_color=BLUE,
    ink_color=INK,
) -> TextImage:
    if len(glyphs) > len(layout.slots):
        raise TooManyGlyphs(f"{len(glyphs)} glyphs but preset {layout.preset_id} has {len(layout.slots)} slots")
    H, W = canvas
    pixels = blank_canvas(canvas, blue_color).astype(np.float32)
    blue = np.asarray(blue_color, dtype=np.float32)
    ink = np.asarray(ink_color, dtype=np.float32)
    for i, (glyph, slot) in enumerate(zip(glyphs, layout.slots)):
        sx, sy, sw, sh = slot
        if glyph.width_px > sw or glyph.height_px > sh:
            raise SlotOverflow(
                f"glyph {glyph.char_id!r} is {glyph.width_px}x{glyph.height_px}, slot {i} is {sw}x{sh}"
            )
        if sx + sw > W or sy + sh > H:
            raise LayoutError(f"slot {i} of {layout.preset_id} lies outside the {H}x{W} canvas")
        x0, y0 = slot_origin(glyph, slot)
        c = np.clip(glyph.bitmap, 0.0, 1.0)[..., None]
        region = pixels[y0:y0 + glyph.height_px, x0:x0 + glyph.width_px]
        region[:] = np.where(c > 0, blue * (1.0 - c) + ink * c, region)
    return TextImage(
        pixels=np.round(pixels).astype(np.uint8),
        blue_color=tuple(int(v) for v in blue_color),
        label="".join(g.char_id for g in glyphs),
        layout_id=layout.preset_id,
    )


def extract_mask(text_image: TextImage, tolerance: int = MASK_TOLERANCE) -> MaskImage:
    """Subtract the blue background: keep pixels farther than ``tolerance`` from it."""
    diff = np.abs(text_image.pixels.astype(np.int16) - np.asarray(text_image.blue_color, dtype=np.int16))
    support = diff.max(axis=-1) > tolerance
    pixels = np.where(support[..., None], text_image.pixels, 0).astype(np.uint8)
    return MaskImage(pixels=pixels, support=support)


def script_composite(mask: MaskImage, template) -> np.ndarray:
    """Paste mask pixels over a background template (array or BackgroundTemplate)."""
    background = getattr(template, "pixels", template)
    if background.shape != mask.pixels.shape:
        raise ShapeMismatch(f"mask is {mask.pixels.shape}, template is {background.shape}")
    return np.where(mask.support[..., None], mask.pixels, background).astype(np.uint8)


# ---------------------------------------------------------------- labels


def sample_plate_string(seed, province_weights: Mapping[str, float] | None = None) -> str:
    if province_weights is None:
        province_weights = {p: 1.0 for p in load_provinces()}
    chars = list(province_weights)
    weights = np.asarray([province_weights[c] for c in chars], dtype=np.float64)
    if weights.size == 0 or np.any(weights < 0) or not np.all(np.isfinite(weights)) or weights.sum() <= 0:
        raise BadWeights("province weights must be finite, nonnegative and not all zero")
    rng = np.random.default_rng(seed)
    province = chars[int(rng.choice(len(chars), p=weights / weights.sum()))]
    letter = LETTERS[int(rng.integers(len(LETTERS)))]
    tail = "".join(ALPHANUMERICS[int(i)] for i in rng.integers(len(ALPHANUMERICS), size=5))
    return province + letter + tail


# ---------------------------------------------------------------- pipeline


class TextForge:
    """Seeded text-image constructor over the bundled atlas and presets."""

    def __init__(
        self,
        canvas: tuple[int, int] = CANVAS,
        blue_color=BLUE,
        ink_color=INK,
        ranges: AugmentRanges = AugmentRanges(),
        tolerance: int = MASK_TOLERANCE,
        layouts: Sequence[LayoutPreset] | None = None,
        atlas: Mapping[str, Glyph] | None = None,
        province_weights: Mapping[str, float] | None = None,
    ):
        self.canvas = tuple(canvas)
        self.blue_color = tuple(blue_color)
        self.ink_color = tuple(ink_color)
        self.ranges = ranges
        self.tolerance = tolerance
        self.atlas = atlas if atlas is not None else load_atlas()
        layouts = layouts if layouts is not None else default_layouts()
        self.layouts = tuple(p for p in layouts if tuple(p.canvas) == self.canvas)
        if not self.layouts:
            raise LayoutError(f"no layout preset targets a {self.canvas} canvas")
        self.province_weights = province_weights

    def render(self, label: str, seed) -> tuple[TextImage, MaskImage]:
        rng = np.random.default_rng(seed)
        candidates = [p for p in self.layouts if len(p.slots) >= len(label)]
        if not candidates:
            raise TooManyGlyphs(f"no preset has {len(label)} slots")
        layout = candidates[int(rng.integers(len(candidates)))]
        glyph_seeds = rng.integers(0, 2**63 - 1, size=len(label))
        glyphs = []
        for char, gseed, slot in zip(label, glyph_seeds, layout.slots):
            if char not in self.atlas:
                raise KeyError(f"character {char!r} is not in the glyph atlas")
            glyphs.append(augment_glyph(self.atlas[char], int(gseed), self.ranges.clipped(slot[2], slot[3])))
        text = compose_text_image(glyphs, layout, self.canvas, self.blue_color, self.ink_color)
        return text, extract_mask(text, self.tolerance)

    def sample(self, seed) -> tuple[TextImage, MaskImage]:
        """Draw a plate string and render it; both draws derive from ``seed``."""
        label_seed, render_seed = seed_sequence(seed).spawn(2)
        label = sample_plate_string(label_seed, self.province_weights)
        return self.render(label, render_seed)
