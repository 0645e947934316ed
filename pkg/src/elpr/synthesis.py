"""Corpus synthesis: model-translated plates, the Script baseline, and raw text images."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .background_bank import BankManifest, load_template, sample_index
from .dataset_io import Manifest, package_corpus
from .errors import EmptyBank
from .imaging import resize, save_png
from .text_forge import AugmentRanges, TextForge, script_composite, seed_sequence
from .trainer import TrainingState

CHUNK = 16


def forge_for(state: TrainingState) -> TextForge:
    c = state.config
    return TextForge(canvas=(c.canvas_height, c.canvas_width), tolerance=c.mask_tolerance, ranges=AugmentRanges())


def contact_sheet(images, cols: int = 4, height: int = 64) -> np.ndarray:
    """Tile up to ``cols * cols`` images, each scaled to ``height`` rows, into one RGB array."""
    images = list(images)[: cols * cols]
    if not images:
        return np.zeros((height, height, 3), dtype=np.uint8)
    tiles = [resize(im, (height, max(1, round(im.shape[1] * height / im.shape[0])))) for im in images]
    width = max(t.shape[1] for t in tiles)
    rows = -(-len(tiles) // cols)
    sheet = np.full((rows * (height + 2), cols * (width + 2), 3), 255, dtype=np.uint8)
    for i, t in enumerate(tiles):
        r, c = divmod(i, cols)
        sheet[r * (height + 2):r * (height + 2) + height, c * (width + 2):c * (width + 2) + t.shape[1]] = t
    return sheet


def _to_uint8(t: torch.Tensor) -> np.ndarray:
    px = (t.clamp(0.0, 1.0) * 255.0).round().to(torch.uint8)
    return px.permute(0, 2, 3, 1).numpy()


def generate_corpus(state: TrainingState, bank: BankManifest, count: int, seed: int, out_dir,
                    preview: bool = True) -> Manifest:
    """Translate ``count`` freshly sampled text images into synthetic plates.

    Item ``i`` draws its plate string, text rendering and background template
    from child ``i`` of ``SeedSequence(seed)``, so outputs do not depend on
    chunking. Images are written at the model's training resolution.
    """
    if count > 0 and not bank.entries:
        raise EmptyBank("background bank is empty")
    model = state.model.eval()
    forge = forge_for(state)
    size = (model.config.image_size, model.config.image_size)
    items, previews = [], []
    children = seed_sequence(seed).spawn(count)
    for start in range(0, count, CHUNK):
        labels, xs, bgs, sources = [], [], [], []
        for child in children[start:start + CHUNK]:
            s_text, s_bg = child.spawn(2)
            text, _ = forge.sample(s_text)
            idx = sample_index(bank, s_bg)
            labels.append(text.label)
            sources.append(bank.entries[idx].path)
            xs.append(resize(text.pixels, size))
            bgs.append(resize(load_template(bank, idx).pixels, size))
        stack = lambda arr: torch.from_numpy(np.stack(arr).astype(np.float32) / 255.0).permute(0, 3, 1, 2)  # noqa: E731
        with torch.no_grad():
            y = model.translate(model.normalize(stack(xs)), model.normalize(stack(bgs)))
            out = _to_uint8(model.denormalize(y))
        for px, label, src in zip(out, labels, sources):
            items.append((px, label, {"template": src}))
            previews.append(px)
    manifest = package_corpus(items, out_dir, name="dgnet-synthetic", id_prefix="gen")
    if preview:
        save_png(Path(out_dir) / "preview.png", contact_sheet(previews))
    return manifest


def script_corpus(bank: BankManifest, count: int, seed: int, out_dir, forge: TextForge | None = None,
                  preview: bool = True) -> Manifest:
    """Paste extracted character masks straight onto background templates.

    Templates are resized to the text canvas. Each record's extras name the
    mask (``masks/<id>.png``), its support (``supports/<id>.png``, 0/255)
    and the template file, so the composite can be checked after the fact.
    """
    if count > 0 and not bank.entries:
        raise EmptyBank("background bank is empty")
    forge = forge or TextForge()
    out_dir = Path(out_dir)
    items, previews = [], []
    for i, child in enumerate(seed_sequence(seed).spawn(count)):
        s_text, s_bg = child.spawn(2)
        text, mask = forge.sample(s_text)
        idx = sample_index(bank, s_bg)
        template = resize(load_template(bank, idx).pixels, forge.canvas)
        plate_id = f"scr{i:06d}"
        save_png(out_dir / "masks" / f"{plate_id}.png", mask.pixels)
        save_png(out_dir / "supports" / f"{plate_id}.png", mask.support.astype(np.uint8) * 255)
        out = script_composite(mask, template)
        items.append((out, text.label, {"plate_id": plate_id, "template": bank.entries[idx].path,
                                        "mask": f"masks/{plate_id}.png", "support": f"supports/{plate_id}.png"}))
        previews.append(out)
    manifest = package_corpus(items, out_dir, name="script-synthetic", id_prefix="scr")
    if preview:
        save_png(out_dir / "preview.png", contact_sheet(previews))
    return manifest


def text_corpus(count: int, seed: int, out_dir, forge: TextForge | None = None) -> Manifest:
    """Write text images with their masks; extras record layout and mask paths."""
    forge = forge or TextForge()
    out_dir = Path(out_dir)
    items = []
    for i, child in enumerate(seed_sequence(seed).spawn(count)):
        text, mask = forge.sample(child)
        plate_id = f"txt{i:06d}"
        save_png(out_dir / "masks" / f"{plate_id}.png", mask.pixels)
        save_png(out_dir / "supports" / f"{plate_id}.png", mask.support.astype(np.uint8) * 255)
        items.append((text.pixels, text.label, {"plate_id": plate_id, "layout": text.layout_id,
                                                "mask": f"masks/{plate_id}.png",
                                                "support": f"supports/{plate_id}.png"}))
    return package_corpus(items, out_dir, name="text-images", id_prefix="txt")

