"""Regenerate the bundled glyph atlas and layout preset table.

The atlas is rendered once from Noto Sans SC (SIL OFL 1.1) and committed as
binary PNG bitmaps, so runtime never touches a font rasterizer.  Fontsource
ships the family as unicode-range subsets; point ``--font-dir`` at the
``files/`` directory of the ``@fontsource/noto-sans-sc`` npm package.

    python tools/build_assets.py --font-dir /tmp/npmfont/package/files
"""

import argparse
import glob
import json
import os

import numpy as np
from fontTools.ttLib import TTFont
from PIL import Image, ImageDraw, ImageFont

DATA = os.path.join(os.path.dirname(__file__), "..", "src", "elpr", "data")

CELL = (96, 48)  # H, W of every atlas bitmap
BOX = (88, 40)  # glyph ink is stretched to fill this box inside the cell
LETTERS = "ABCDEFGHJKLMNPQRSTUVWXYZ"
DIGITS = "0123456789"


def _font_for(char, font_files):
    for path in font_files:
        if ord(char) in TTFont(path).getBestCmap():
            return path
    raise SystemExit(f"no font subset covers {char!r}")


def render_glyph(char, font_path):
    font = ImageFont.truetype(font_path, 400)
    canvas = Image.new("L", (600, 600), 0)
    ImageDraw.Draw(canvas).text((50, 0), char, font=font, fill=255)
    ink = canvas.crop(canvas.getbbox())
    ink = ink.resize((BOX[1], BOX[0]), Image.LANCZOS)
    bitmap = (np.asarray(ink) >= 128).astype(np.uint8) * 255
    cell = np.zeros(CELL, dtype=np.uint8)
    top = (CELL[0] - BOX[0]) // 2
    left = (CELL[1] - BOX[1]) // 2
    cell[top:top + BOX[0], left:left + BOX[1]] = bitmap
    return cell


def build_atlas(font_dir, weight):
    with open(os.path.join(DATA, "provinces.json"), encoding="utf-8") as fh:
        provinces = [p["char"] for p in json.load(fh)["provinces"]]
    font_files = sorted(glob.glob(os.path.join(font_dir, f"noto-sans-sc-*-{weight}-normal.woff")))
    out_dir = os.path.join(DATA, "glyphs")
    os.makedirs(out_dir, exist_ok=True)
    index = {}
    for char in provinces + list(LETTERS) + list(DIGITS):
        name = f"u{ord(char):04x}.png"
        cell = render_glyph(char, _font_for(char, font_files))
        Image.fromarray(cell, mode="L").save(os.path.join(out_dir, name), optimize=False, compress_level=9)
        index[char] = name
    with open(os.path.join(out_dir, "index.json"), "w", encoding="utf-8") as fh:
        json.dump({"cell": list(CELL), "glyphs": index}, fh, ensure_ascii=False, indent=1)
    print(f"wrote {len(index)} glyphs to {out_dir}")


def _row(x0, y, n, w, h, gaps):
    slots, x = [], x0
    for i in range(n):
        slots.append([x, y, w, h])
        if i < n - 1:
            x += w + gaps[i]
    return slots


def build_layouts():
    H, W = 256, 512
    sw, sh = 62, 124

    def centered(gaps):
        total = 7 * sw + sum(gaps)
        return (W - total) // 2

    presets = []
    for pid, gaps, y in [
        ("single_tight", [2] * 6, (H - sh) // 2),
        ("single_wide", [10] * 6, (H - sh) // 2),
        ("single_province_gap", [4, 20, 4, 4, 4, 4], (H - sh) // 2),
        ("single_high", [6] * 6, 12),
        ("single_low", [6] * 6, H - sh - 12),
    ]:
        presets.append({"preset_id": pid, "rows": 1, "canvas": [H, W],
                        "slots": _row(centered(gaps), y, 7, sw, sh, gaps)})

    presets.append({"preset_id": "single_left", "rows": 1, "canvas": [H, W],
                    "slots": _row(4, (H - sh) // 2, 7, sw, sh, [3] * 6)})
    presets.append({"preset_id": "single_right", "rows": 1, "canvas": [H, W],
                    "slots": _row(W - 4 - (7 * sw + 18), (H - sh) // 2, 7, sw, sh, [3] * 6)})

    stagger = _row(centered([6] * 6), 0, 7, sw, sh, [6] * 6)
    for i, slot in enumerate(stagger):
        slot[1] = (H - sh) // 2 + (-24 if i % 2 == 0 else 24)
    presets.append({"preset_id": "single_stagger", "rows": 1, "canvas": [H, W], "slots": stagger})

    incline = _row(centered([6] * 6), 0, 7, sw, sh, [6] * 6)
    for i, slot in enumerate(incline):
        slot[1] = 24 + i * 14
    presets.append({"preset_id": "single_incline", "rows": 1, "canvas": [H, W], "slots": incline})

    # Double row: two leading characters above five trailing ones.
    dh = 120
    bottom_x = (W - (5 * sw + 4 * 8)) // 2
    presets.append({"preset_id": "double_center", "rows": 2, "canvas": [H, W],
                    "slots": _row((W - (2 * sw + 8)) // 2, 4, 2, sw, dh, [8])
                    + _row(bottom_x, 4 + dh + 8, 5, sw, dh, [8] * 4)})
    presets.append({"preset_id": "double_left", "rows": 2, "canvas": [H, W],
                    "slots": _row(bottom_x, 4, 2, sw, dh, [8])
                    + _row(bottom_x, 4 + dh + 8, 5, sw, dh, [8] * 4)})

    with open(os.path.join(DATA, "layouts.json"), "w", encoding="utf-8") as fh:
        json.dump({"presets": presets}, fh, indent=1)
    print(f"wrote {len(presets)} layout presets")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--font-dir", help="directory of Noto Sans SC .woff subsets")
    parser.add_argument("--weight", default="900")
    parser.add_argument("--layouts-only", action="store_true")
    args = parser.parse_args()
    build_layouts()
    if not args.layouts_only:
        if not args.font_dir:
            parser.error("--font-dir is required to rebuild the atlas")
        build_atlas(args.font_dir, args.weight)


if __name__ == "__main__":
    main()
