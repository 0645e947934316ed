"""Procedural stand-in for a real enlarged-plate corpus.

Scenes are painted vehicle rears: a shaded panel with stripes, grime and
lamps, and the plate characters painted straight onto it. They exist so the
training loop, background harvesting and CLI can run end to end without the
non-public real images; they are not a substitute for them.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageFilter

from .dataset_io import ChallengeTag, Manifest, PlateRecord, save_manifest
from .imaging import resize, save_png
from .text_forge import TextForge

SCENE = (256, 384)
PANELS = [(228, 190, 40), (235, 235, 230), (40, 90, 170), (60, 130, 80), (130, 130, 135), (190, 60, 50)]
INKS = [(20, 20, 20), (245, 245, 245), (200, 30, 30)]


def _contrasting_ink(panel, rng):
    options = [ink for ink in INKS if sum(abs(a - b) for a, b in zip(ink, panel)) > 200]
    return options[int(rng.integers(len(options)))]


def make_scene(seed, forge: TextForge | None = None, size=SCENE):
    """Return ``(scene, plate_bbox, label, challenges)``."""
    forge = forge or TextForge()
    rng = np.random.default_rng(seed)
    H, W = size
    panel = np.asarray(PANELS[int(rng.integers(len(PANELS)))], dtype=np.float32)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float32)
    angle = rng.uniform(0, 2 * np.pi)
    shade = 1.0 + 0.25 * ((np.cos(angle) * xx / W + np.sin(angle) * yy / H) - 0.5)
    scene = panel[None, None, :] * shade[..., None]
    tags = set()

    if rng.random() < 0.6:  # reflective tape along the bottom
        y0 = int(rng.integers(H - 40, H - 12))
        stripe = ((xx[y0:y0 + 10] // 24) % 2).astype(bool)
        scene[y0:y0 + 10][stripe] = (220, 30, 30)
        scene[y0:y0 + 10][~stripe] = (240, 240, 240)
        tags.add(ChallengeTag.BackgroundClutter)
    for _ in range(int(rng.integers(1, 4))):  # lamps and bolts
        cx, cy = int(rng.integers(0, W)), int(rng.integers(0, H))
        r = int(rng.integers(6, 20))
        disk = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        scene[disk] = rng.uniform(0, 255, size=3)
    grime = rng.normal(0, 1, size=(H // 8, W // 8)).astype(np.float32)
    grime = np.asarray(Image.fromarray(grime).resize((W, H), Image.BILINEAR))
    scene += 18.0 * grime[..., None]

    ph = int(rng.integers(80, 112))
    pw = int(rng.integers(170, 230))
    px = int(rng.integers(72, W - pw - 72 + 1))
    py = int(rng.integers(64, H - ph - 64 + 1))
    text, mask = forge.sample(rng.integers(2**63 - 1))
    ink = np.asarray(_contrasting_ink(panel, rng), dtype=np.float32)
    support = resize(mask.support.astype(np.uint8) * 255, (ph, pw), "bilinear") >= 128
    if rng.random() < 0.3:  # abrasion: knock out speckles of paint
        support &= rng.random(support.shape) > 0.15
        tags.add(ChallengeTag.Abrasion)
    region = scene[py:py + ph, px:px + pw]
    region[support] = 0.15 * region[support] + 0.85 * ink
    if text.layout_id.startswith("double"):
        tags.add(ChallengeTag.DoubleRowPlate)
    if text.layout_id in ("single_stagger", "single_wide", "single_province_gap"):
        tags.add(ChallengeTag.DifferentSpacing)
    if text.layout_id == "single_incline":
        tags.add(ChallengeTag.InclinedAngle)

    scene += rng.normal(0, 4.0, size=scene.shape)
    out = np.clip(np.round(scene), 0, 255).astype(np.uint8)
    if rng.random() < 0.2:
        out = np.asarray(Image.fromarray(out).filter(ImageFilter.GaussianBlur(1.5)))
        tags.add(ChallengeTag.Blur)
    if rng.random() < 0.15:
        out = np.clip(out.astype(np.float32) * rng.choice([0.45, 1.6]), 0, 255).astype(np.uint8)
        tags.add(ChallengeTag.AbnormalIllumination)
    return out, (px, py, pw, ph), text.label, sorted(t.value for t in tags)


def make_toy_corpus(out_dir, n: int, seed=0, size=SCENE) -> Manifest:
    """Write ``n`` scenes with plate boxes and challenge tags as a manifest."""
    out_dir = Path(out_dir)
    forge = TextForge()
    records = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        scene, bbox, label, tags = make_scene(child, forge, size)
        rel = f"images/toy{i:05d}.png"
        save_png(out_dir / rel, scene)
        records.append(PlateRecord(f"toy{i:05d}", rel, label, province=label[0], challenges=tuple(tags),
                                   plate_bbox=bbox))
    manifest = Manifest(tuple(records), name="toy-elpr", root=out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
