"""Adversarial, cycle, reconstruction and mask-constraint losses."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Mapping

import torch
import torch.nn.functional as F

from .errors import NonFiniteError, ShapeMismatch


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    recon: float = 10.0
    cycle: float = 10.0
    mask: float = 15.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    adv_d: float
    adv_g: float
    recon: float
    cycle: float
    mask: float
    total: float

    def to_record(self, step: int) -> dict:
        return {"step": step, **asdict(self)}

    def to_json(self, step: int) -> str:
        return json.dumps(self.to_record(step))


def _finite(name: str, t: torch.Tensor) -> None:
    if not torch.isfinite(t).all():
        raise NonFiniteError(f"{name} contains non-finite values")


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def adv_loss_d(d_real: torch.Tensor, d_fake: torch.Tensor, mode: str = "lsgan") -> torch.Tensor:
    """Discriminator side. ``lsgan``: mean of ½[(d_real − 1)² + d_fake²]."""
    _finite("d_real", d_real)
    _finite("d_fake", d_fake)
    if mode == "lsgan":
        return 0.5 * (((d_real - 1.0) ** 2).mean() + (d_fake ** 2).mean())
    if mode == "log":
        return F.binary_cross_entropy_with_logits(d_real, torch.ones_like(d_real)) + \
            F.binary_cross_entropy_with_logits(d_fake, torch.zeros_like(d_fake))
    raise ValueError(f"unknown adversarial mode {mode!r}")


def adv_loss_g(d_fake: torch.Tensor, mode: str = "lsgan") -> torch.Tensor:
    """Generator side. ``lsgan``: mean of ½(d_fake − 1)²."""
    _finite("d_fake", d_fake)
    if mode == "lsgan":
        return 0.5 * ((d_fake - 1.0) ** 2).mean()
    if mode == "log":
        return F.binary_cross_entropy_with_logits(d_fake, torch.ones_like(d_fake))
    raise ValueError(f"unknown adversarial mode {mode!r}")


def cycle_l1(x: torch.Tensor, x_cycle: torch.Tensor) -> torch.Tensor:
    _same_shape(x, x_cycle)
    return (x - x_cycle).abs().mean()


def recon_l1(x: torch.Tensor, x_reconstruction: torch.Tensor) -> torch.Tensor:
    _same_shape(x, x_reconstruction)
    return (x - x_reconstruction).abs().mean()


def mask_l1(
    i_mask: torch.Tensor,
    y_translation: torch.Tensor,
    support: torch.Tensor | None = None,
    region: str = "support",
) -> torch.Tensor:
    """Mean absolute difference between the mask image and the synthetic plate.

    With ``region="support"`` only pixels in ``support`` (``(N, H, W)`` or
    ``(N, 1, H, W)`` bool) are compared, over all channels. ``"full"``
    compares every pixel.
    """
    _same_shape(i_mask, y_translation)
    diff = (i_mask - y_translation).abs()
    if region == "full":
        return diff.mean()
    if region != "support":
        raise ValueError(f"unknown mask region {region!r}")
    if support is None:
        raise ValueError("region='support' needs a support map")
    if support.dim() == 3:
        support = support.unsqueeze(1)
    if support.shape[0] != diff.shape[0] or support.shape[2:] != diff.shape[2:]:
        raise ShapeMismatch(f"support {tuple(support.shape)} does not match image {tuple(diff.shape)}")
    sel = support.to(diff.dtype).expand_as(diff)
    n = sel.sum()
    if n == 0:
        warnings.warn("mask support is empty; mask loss is 0", RuntimeWarning, stacklevel=2)
        return (diff * sel).sum()
    return (diff * sel).sum() / n


def total_loss(parts: Mapping[str, float] | LossReport, weights: LossWeights = LossWeights()):
    """Weighted generator objective over ``adv``/``adv_g``, ``recon``, ``cycle``, ``mask``."""
    if isinstance(parts, LossReport):
        parts = asdict(parts)
    adv = parts["adv_g"] if "adv_g" in parts else parts["adv"]
    terms = {"adv": adv, "recon": parts["recon"], "cycle": parts["cycle"], "mask": parts["mask"]}
    for name, v in terms.items():
        finite = torch.isfinite(v).all() if isinstance(v, torch.Tensor) else math.isfinite(v)
        if not finite:
            raise NonFiniteError(f"loss term {name} is not finite")
    return (weights.adv * terms["adv"] + weights.recon * terms["recon"]
            + weights.cycle * terms["cycle"] + weights.mask * terms["mask"])
