"""Shared oracles and fixtures-as-functions for the test suite."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from elpr.losses import adv_loss_d, adv_loss_g, cycle_l1, mask_l1, recon_l1
from elpr.model import ArchConfig, DGNet

TINY_ARCH = ArchConfig(image_size=8, text_channels=2, bg_channels=2, depth=1, res_blocks=1, stem_kernel=3,
                       activation="silu")


def tiny_model(seed=0, conditioned=True) -> DGNet:
    """Float64 toy DGNet (972 parameters).

    ``conditioned`` moves the evaluation point away from torch's small
    default init: convs that feed an InstanceNorm get unit-variance weights
    (the forward pass is invariant to their scale, but finite-difference
    truncation error grows as 1/|w|^2) and the two output convs get std 0.3.
    """
    torch.manual_seed(seed)
    model = DGNet(TINY_ARCH).double()
    model.set_norm_stats((0.45, 0.5, 0.55), (0.25, 0.3, 0.2))
    if conditioned:
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for mod in model.modules():
                if isinstance(mod, nn.Sequential):
                    for a, b in zip(mod, list(mod)[1:]):
                        if isinstance(a, nn.Conv2d) and isinstance(b, nn.InstanceNorm2d):
                            a.weight.copy_(torch.randn(a.weight.shape, generator=g, dtype=torch.float64))
            g = torch.Generator().manual_seed(seed + 100)
            for gen in (model.g_xy, model.g_yx):
                conv = gen.layers[-2]
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g, dtype=torch.float64) * 0.3)
    return model


def tiny_batch(model: DGNet, seed=0) -> dict:
    """Normalized batch whose text side is two-level, so L1 residuals never sit at a kink."""
    g = torch.Generator().manual_seed(seed)
    s = model.config.image_size
    binary = (torch.rand(1, 1, s, s, generator=g, dtype=torch.float64) > 0.6).double()
    blue = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64).view(1, 3, 1, 1)
    x01 = blue * (1 - binary) + binary  # white ink on blue
    support = binary.bool()
    imask01 = x01 * binary
    norm = model.normalize
    return {
        "x": norm(x01),
        "x_bg": norm(blue.expand(1, 3, s, s)),
        "y_bg": norm(torch.rand(1, 3, s, s, generator=g, dtype=torch.float64)),
        "y_real": norm(torch.rand(1, 3, s, s, generator=g, dtype=torch.float64)),
        "i_mask": norm(imask01),
        "support": support,
    }


def loss_functions():
    """Each training loss as a function of (model, batch)."""
    def adv_d(m, b):
        d_real, _ = m.discriminate(b["y_real"])
        d_fake, _ = m.discriminate(m.translate(b["x"], b["y_bg"]))
        return adv_loss_d(d_real, d_fake)

    def adv_g(m, b):
        d_fake, _ = m.discriminate(m.translate(b["x"], b["y_bg"]))
        return adv_loss_g(d_fake)

    def recon(m, b):
        return recon_l1(b["x"], m.reconstruct(b["x"], b["x_bg"]))

    def cycle(m, b):
        return cycle_l1(b["x"], m.cycle_back(m.translate(b["x"], b["y_bg"]), b["x_bg"]))

    def mask(m, b):
        return mask_l1(b["i_mask"], m.translate(b["x"], b["y_bg"]), b["support"])

    return {"adv_d": adv_d, "adv_g": adv_g, "recon": recon, "cycle": cycle, "mask": mask}


def gradient_check(model: DGNet, batch: dict, fn, step: float = 1e-3, floor_fraction: float = 1e-3) -> dict:
    """Relative error between autograd and central differences, per parameter group.

    Error is ``|a - n| / max(|a|, |n|, floor)`` with ``floor`` equal to
    ``floor_fraction`` times the largest analytic gradient magnitude of the
    loss, so coordinates a thousand times smaller than the loss's dominant
    gradient are judged on that scale. Returns ``{group: errors}``.
    """
    model.zero_grad(set_to_none=True)
    fn(model, batch).backward()
    grads = [p.grad.abs().max().item() for p in model.parameters() if p.grad is not None]
    floor = floor_fraction * max(grads) if grads else 0.0
    out = {}
    for name, params in model.parameter_groups().items():
        errs = []
        for p in params:
            analytic = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
            flat = p.data.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                with torch.no_grad():
                    flat[i] = orig + step
                    up = fn(model, batch).item()
                    flat[i] = orig - step
                    down = fn(model, batch).item()
                    flat[i] = orig
                numeric = (up - down) / (2 * step)
                a = analytic.view(-1)[i].item()
                scale = max(abs(a), abs(numeric))
                errs.append(0.0 if scale == 0 else abs(a - numeric) / max(scale, floor))
        out[name] = np.asarray(errs)
    return out


def brute_dilate(support: np.ndarray, k: int) -> np.ndarray:
    """Pixel on iff some input pixel lies within Chebyshev distance k."""
    H, W = support.shape
    out = np.zeros_like(support)
    ys, xs = np.nonzero(support)
    for y in range(H):
        for x in range(W):
            out[y, x] = bool(np.any((np.abs(ys - y) <= k) & (np.abs(xs - x) <= k)))
    return out


def brute_erode(support: np.ndarray, k: int) -> np.ndarray:
    """Pixel on iff its whole (2k+1)^2 window is on and inside the image."""
    H, W = support.shape
    out = np.zeros_like(support)
    for y in range(H):
        for x in range(W):
            if y - k < 0 or x - k < 0 or y + k >= H or x + k >= W:
                continue
            out[y, x] = bool(support[y - k:y + k + 1, x - k:x + k + 1].all())
    return out


def levenshtein_oracle(a: str, b: str) -> int:
    """Textbook full-table edit distance."""
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        table[i][0] = i
    for j in range(len(b) + 1):
        table[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(table[i - 1][j] + 1, table[i][j - 1] + 1, table[i - 1][j - 1] + cost)
    return table[len(a)][len(b)]


def fid_oracle(xa: np.ndarray, xb: np.ndarray) -> float:
    """FID via symmetric square roots from eigendecompositions only."""
    mu_a, mu_b = xa.mean(0), xb.mean(0)
    sa, sb = np.cov(xa, rowvar=False), np.cov(xb, rowvar=False)

    def sym_sqrt(m):
        w, v = np.linalg.eigh(m)
        return (v * np.sqrt(np.clip(w, 0, None))) @ v.T

    ra = sym_sqrt(sa)
    inner = ra @ sb @ ra
    tr_root = np.sqrt(np.clip(np.linalg.eigvalsh((inner + inner.T) / 2), 0, None)).sum()
    return float(((mu_a - mu_b) ** 2).sum() + np.trace(sa) + np.trace(sb) - 2 * tr_root)


def kid_oracle(xa: np.ndarray, xb: np.ndarray) -> float:
    """Double-loop unbiased MMD^2 with k(x, y) = (x.y / D + 1)^3, times 100."""
    n, m, d = len(xa), len(xb), xa.shape[1]
    k = lambda u, v: (float(np.dot(u, v)) / d + 1.0) ** 3  # noqa: E731
    sxx = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                sxx += k(xa[i], xa[j])
    syy = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                syy += k(xb[i], xb[j])
    sxy = 0.0
    for i in range(n):
        for j in range(m):
            sxy += k(xa[i], xb[j])
    return 100.0 * (sxx / (n * (n - 1)) + syy / (m * (m - 1)) - 2.0 * sxy / (n * m))


# Challenge counts of the reference corpus, used to build a same-shaped fixture.
REFERENCE_TAG_COUNTS = {
    "InclinedAngle": 590, "AbnormalIllumination": 807, "DifferentSpacing": 1492, "SizeVariation": 258,
    "Blur": 650, "Abrasion": 1404, "BackgroundClutter": 2435, "NonStandardCharacter": 485,
    "DoubleRowPlate": 10, "Occlusion": 589,
}
REFERENCE_SIZE = 9342


def synthetic_manifest(n=REFERENCE_SIZE, tag_counts=REFERENCE_TAG_COUNTS, seed=0):
    """A manifest of ``n`` grammar-valid records whose tag histogram equals ``tag_counts``."""
    from elpr.dataset_io import Manifest, PlateRecord
    from elpr.text_forge import sample_plate_string

    rng = np.random.default_rng(seed)
    tags = [[] for _ in range(n)]
    for tag, count in tag_counts.items():
        for i in rng.choice(n, size=count, replace=False):
            tags[i].append(tag)
    records = []
    for i in range(n):
        label = sample_plate_string([seed, i])
        records.append(PlateRecord(f"p{i:05d}", f"images/p{i:05d}.png", label, label[0], tuple(tags[i])))
    return Manifest(tuple(records), name="fixture")


def check_script_corpus(manifest, bank) -> int:
    """Recompose every Script record from its saved mask, support and template; return the count checked.

    Outside the support each output pixel must equal the resized template, and
    inside it must equal the mask.
    """
    from elpr.imaging import load_png, resize

    for rec in manifest.records:
        out = load_png(manifest.image_path(rec))
        mask = load_png(manifest.root / rec.extra["mask"])
        support = load_png(manifest.root / rec.extra["support"])[..., 0] > 0
        template = resize(load_png(bank.root / rec.extra["template"]), out.shape[:2])
        assert support.any(), rec.plate_id
        assert np.array_equal(out[~support], template[~support]), rec.plate_id
        assert np.array_equal(out[support], mask[support]), rec.plate_id
    return len(manifest.records)


def stamp_oracle(glyphs, layout, canvas=(256, 512)):
    """Independent renderer: coverage plane with each glyph stamped at its slot center."""
    cov = np.zeros(canvas, dtype=bool)
    for g, (x, y, w, h) in zip(glyphs, layout.slots):
        x0, y0 = x + (w - g.width_px) // 2, y + (h - g.height_px) // 2
        cov[y0:y0 + g.height_px, x0:x0 + g.width_px] |= g.bitmap > 0
    return cov


# One "PASS"/"FAIL" line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []
