"""Alternating discriminator/generator training with deterministic data and resumable checkpoints."""

from __future__ import annotations

import functools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .background_bank import BankManifest, sample_template
from .dataset_io import Manifest
from .errors import CheckpointError, EmptyBank, EmptySource, NonFiniteError, ZeroVariance
from .imaging import crop, load_png, resize
from .losses import LossReport, LossWeights, adv_loss_d, adv_loss_g, cycle_l1, mask_l1, recon_l1, total_loss
from .model import ArchConfig, DGNet
from .text_forge import AugmentRanges, TextForge, TextImage, blank_canvas, extract_mask, seed_sequence

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "ELPR-DGNET-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    iterations: int = 100_000
    batch_size: int = 1
    image_size: int = 256
    seed: int = 0
    adv_weight: float = 1.0
    recon_weight: float = 10.0
    cycle_weight: float = 10.0
    mask_weight: float = 15.0
    mask_region: str = "support"
    adversarial: str = "lsgan"
    checkpoint_interval: int = 5000
    text_channels: int = 64
    bg_channels: int = 64
    depth: int = 2
    res_blocks: int = 4
    stem_kernel: int = 7
    activation: str = "relu"
    head: str = "pixel"
    tie_shared_encoders: bool = False
    text_discriminator: bool = False
    canvas_height: int = 256
    canvas_width: int = 512
    mask_tolerance: int = 8
    prefetch_workers: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.beta1 < self.beta2 < 1:
            raise ValueError("need 0 <= beta1 < beta2 < 1")
        if self.iterations < 1 or self.batch_size < 1 or self.checkpoint_interval < 1:
            raise ValueError("iterations, batch_size and checkpoint_interval must be >= 1")
        if self.mask_region not in ("support", "full"):
            raise ValueError(f"mask_region must be 'support' or 'full', got {self.mask_region!r}")
        if self.adversarial not in ("lsgan", "log"):
            raise ValueError(f"adversarial must be 'lsgan' or 'log', got {self.adversarial!r}")
        self.weights()
        self.arch()

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale preset: 64x64 images, narrow networks, 200 iterations."""
        base = dict(image_size=64, iterations=200, text_channels=16, bg_channels=16, res_blocks=2,
                    checkpoint_interval=50)
        base.update(overrides)
        return cls(**base)

    def weights(self) -> LossWeights:
        return LossWeights(self.adv_weight, self.recon_weight, self.cycle_weight, self.mask_weight)

    def arch(self) -> ArchConfig:
        return ArchConfig(
            image_size=self.image_size, text_channels=self.text_channels, bg_channels=self.bg_channels,
            depth=self.depth, res_blocks=self.res_blocks, stem_kernel=self.stem_kernel,
            activation=self.activation, head=self.head, tie_shared_encoders=self.tie_shared_encoders,
            text_discriminator=self.text_discriminator,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        coerced = {}
        for k, v in d.items():
            kind = type(getattr(cls, k))
            if kind is bool and not isinstance(v, bool):
                raise ValueError(f"config key {k} must be a boolean")
            coerced[k] = kind(v)
        return cls(**coerced)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------- normalization


@dataclass(frozen=True)
class NormStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]


def compute_norm_stats(images: Iterable[np.ndarray]) -> NormStats:
    """Per-channel mean and population std over every pixel of every image.

    ``uint8`` images are accumulated in exact integer arithmetic (so the
    result does not depend on image order) and reported on the [0, 1] scale;
    float images are taken as already on that scale.
    """
    count = 0
    int_sum = np.zeros(3, dtype=object)
    int_sq = np.zeros(3, dtype=object)
    f_sum = np.zeros(3, dtype=np.float64)
    f_sq = np.zeros(3, dtype=np.float64)
    for img in images:
        px = np.asarray(img).reshape(-1, 3)
        count += px.shape[0]
        if px.dtype == np.uint8:
            wide = px.astype(np.int64)
            int_sum += np.array([int(v) for v in wide.sum(axis=0)], dtype=object)
            int_sq += np.array([int(v) for v in (wide * wide).sum(axis=0)], dtype=object)
        else:
            wide = px.astype(np.float64) * 255.0
            f_sum += wide.sum(axis=0)
            f_sq += (wide * wide).sum(axis=0)
    if count == 0:
        raise EmptySource("no images to compute normalization statistics from")
    mean, std = [], []
    for c in range(3):
        s = float(int_sum[c]) + f_sum[c]
        sq = float(int_sq[c]) + f_sq[c]
        m = s / count
        var = max(sq / count - m * m, 0.0)
        if var <= 0.0:
            raise ZeroVariance(f"channel {'RGB'[c]} has zero variance")
        mean.append(float(m / 255.0))
        std.append(float(math.sqrt(var) / 255.0))
    return NormStats(tuple(mean), tuple(std))


# ---------------------------------------------------------------- data


@dataclass
class Batch:
    x: torch.Tensor
    x_bg: torch.Tensor
    y_bg: torch.Tensor
    y_real: torch.Tensor
    i_mask: torch.Tensor
    support: torch.Tensor  # (N, 1, S, S) bool


def _to_unit(pixels: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(pixels.astype(np.float32) / 255.0).permute(2, 0, 1)


class TrainingData:
    """Synthesizes one training batch per step as a pure function of (seed, step).

    Text images, their masks and background templates are drawn fresh each
    step; real plates are sampled from the manifest (cropped to
    ``plate_bbox`` when present).
    """

    def __init__(self, config: TrainConfig, real: Manifest, bank: BankManifest,
                 forge: TextForge | None = None, norm: NormStats | None = None):
        if not bank.entries:
            raise EmptyBank("training needs a non-empty background bank")
        self.real = real.subset("train") if any(r.split == "train" for r in real.records) else real
        if not self.real.records:
            raise EmptySource("training needs at least one real plate image")
        self.config = config
        self.bank = bank
        self.size = (config.image_size, config.image_size)
        self.forge = forge or TextForge(
            canvas=(config.canvas_height, config.canvas_width), tolerance=config.mask_tolerance,
            ranges=AugmentRanges(),
        )
        self.x_bg_pixels = resize(blank_canvas(self.forge.canvas, self.forge.blue_color), self.size)
        self.norm = norm

    @functools.lru_cache(maxsize=2048)
    def real_plate(self, index: int) -> np.ndarray:
        rec = self.real.records[index]
        pixels = load_png(self.real.image_path(rec))
        if rec.plate_bbox is not None:
            pixels = crop(pixels, rec.plate_bbox)
        return resize(pixels, self.size)

    def real_plates(self) -> Iterable[np.ndarray]:
        return (self.real_plate(i) for i in range(len(self.real.records)))

    def sample(self, seed):
        """One unnormalized example: uint8 arrays for x, y_bg, y_real, i_mask and bool support."""
        s_text, s_bg, s_real = seed_sequence(seed).spawn(3)
        text, _ = self.forge.sample(s_text)
        x = resize(text.pixels, self.size)
        mask = extract_mask(TextImage(x, text.blue_color, text.label, text.layout_id), self.forge.tolerance)
        y_bg = resize(sample_template(self.bank, s_bg).pixels, self.size)
        y_real = self.real_plate(int(np.random.default_rng(s_real).integers(len(self.real.records))))
        return {"x": x, "y_bg": y_bg, "y_real": y_real, "i_mask": mask.pixels, "support": mask.support,
                "label": text.label}

    def batch(self, step: int) -> Batch:
        if self.norm is None:
            raise RuntimeError("normalization statistics are not set")
        mean = torch.tensor(self.norm.mean, dtype=torch.float32).view(3, 1, 1)
        std = torch.tensor(self.norm.std, dtype=torch.float32).view(3, 1, 1)
        norm = lambda px: (_to_unit(px) - mean) / std  # noqa: E731
        items = [self.sample([self.config.seed, step, i]) for i in range(self.config.batch_size)]
        x_bg = norm(self.x_bg_pixels)
        return Batch(
            x=torch.stack([norm(it["x"]) for it in items]),
            x_bg=torch.stack([x_bg] * len(items)),
            y_bg=torch.stack([norm(it["y_bg"]) for it in items]),
            y_real=torch.stack([norm(it["y_real"]) for it in items]),
            i_mask=torch.stack([norm(it["i_mask"]) for it in items]),
            support=torch.stack([torch.from_numpy(it["support"])[None] for it in items]),
        )


# ---------------------------------------------------------------- optimization


def make_adam(params, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=config.learning_rate, betas=(config.beta1, config.beta2))


def make_optimizers(model: DGNet, config: TrainConfig):
    """``(generator optimizer, discriminator optimizer)`` over the model's two parameter sets."""
    return make_adam(model.generator_parameters(), config), make_adam(model.discriminator_parameters(), config)


def train_step(model: DGNet, batch: Batch, opt_g, opt_d, config: TrainConfig) -> LossReport:
    """One discriminator update followed by one generator update."""
    mode = config.adversarial
    y_t = model.translate(batch.x, batch.y_bg)

    opt_d.zero_grad(set_to_none=True)
    d_real, _ = model.discriminate(batch.y_real)
    d_fake, _ = model.discriminate(y_t.detach())
    loss_d = adv_loss_d(d_real, d_fake, mode)
    x_cycle_detached = None
    if model.config.text_discriminator:
        x_cycle_detached = model.cycle_back(y_t, batch.x_bg).detach()
        loss_d = loss_d + adv_loss_d(model.discriminate_text(batch.x), model.discriminate_text(x_cycle_detached), mode)
    if not torch.isfinite(loss_d):
        raise NonFiniteError("discriminator loss adv_d is not finite")
    loss_d.backward()
    opt_d.step()

    opt_g.zero_grad(set_to_none=True)
    d_fake_g, shared = model.discriminate(y_t)
    x_cycle = model.cycle_back(y_t, batch.x_bg, shared)
    x_rec = model.reconstruct(batch.x, batch.x_bg)
    parts = {
        "adv_g": adv_loss_g(d_fake_g, mode),
        "recon": recon_l1(batch.x, x_rec),
        "cycle": cycle_l1(batch.x, x_cycle),
        "mask": mask_l1(batch.i_mask, y_t, batch.support, config.mask_region),
    }
    if model.config.text_discriminator:
        parts["adv_g"] = parts["adv_g"] + adv_loss_g(model.discriminate_text(x_cycle), mode)
    for name, value in parts.items():
        if not torch.isfinite(value):
            raise NonFiniteError(f"generator loss term {name} is not finite")
    loss_g = total_loss(parts, config.weights())
    loss_g.backward()
    opt_g.step()

    vals = {k: float(v.detach()) for k, v in parts.items()}
    return LossReport(adv_d=float(loss_d.detach()), total=float(loss_g.detach()), **vals)


# ---------------------------------------------------------------- checkpoints


@dataclass
class TrainingState:
    model: DGNet
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    step: int
    config: TrainConfig
    norm: NormStats


def assert_finite_parameters(model: DGNet) -> None:
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise NonFiniteError(f"parameter {name} became non-finite")


def save_checkpoint(path, state: TrainingState) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    groups = {name: {k: v for k, v in getattr(state.model, name).state_dict().items()}
              for name in ("e_share1", "e_share2", "e_bg", "g_xy", "g_yx", "classifier")}
    if state.model.config.text_discriminator:
        groups["e_text_disc"] = state.model.e_text_disc.state_dict()
        groups["text_classifier"] = state.model.text_classifier.state_dict()
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "config": state.config.to_dict(),
        "arch": state.model.config.to_dict(),
        "norm": {"mean": [float(v) for v in state.norm.mean], "std": [float(v) for v in state.norm.std]},
        "params": groups,
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> TrainingState:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises several unrelated types for bad archives
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a DGNet checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {payload.get('version')} != {CHECKPOINT_VERSION}")
    config = TrainConfig.from_dict(payload["config"])
    model = DGNet(ArchConfig.from_dict(payload["arch"]))
    for name, sd in payload["params"].items():
        getattr(model, name).load_state_dict(sd)
    norm = NormStats(tuple(payload["norm"]["mean"]), tuple(payload["norm"]["std"]))
    model.set_norm_stats(norm.mean, norm.std)
    opt_g, opt_d = make_optimizers(model, config)
    opt_g.load_state_dict(payload["opt_g"])
    opt_d.load_state_dict(payload["opt_d"])
    return TrainingState(model, opt_g, opt_d, int(payload["step"]), config, norm)


def latest_checkpoint(out_dir) -> Path | None:
    found = sorted(Path(out_dir, "checkpoints").glob("step_*.pt"))
    return found[-1] if found else None


def new_state(config: TrainConfig, norm: NormStats) -> TrainingState:
    torch.manual_seed(config.seed)
    model = DGNet(config.arch())
    model.set_norm_stats(norm.mean, norm.std)
    opt_g, opt_d = make_optimizers(model, config)
    return TrainingState(model, opt_g, opt_d, 0, config, norm)


# ---------------------------------------------------------------- loop


def _truncate_log(log_path: Path, step: int) -> None:
    if not log_path.exists():
        return
    kept = [line for line in log_path.read_text(encoding="utf-8").splitlines()
            if line.strip() and json.loads(line)["step"] <= step]
    log_path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")


def train(config: TrainConfig, data: TrainingData, out_dir, resume: bool = True,
          stop_after: int | None = None) -> Path:
    """Run ``config.iterations`` steps into ``out_dir``.

    Writes ``losses.jsonl`` (one record per step), ``config.json`` and
    ``checkpoints/step_NNNNNNN.pt`` every ``checkpoint_interval`` steps and at
    the end. An existing checkpoint in ``out_dir`` is resumed from.
    ``stop_after`` ends the run early at that step (with a checkpoint), which
    is how interruption is simulated in tests.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "losses.jsonl"
    ckpt = latest_checkpoint(out_dir) if resume else None
    if ckpt is not None:
        state = load_checkpoint(ckpt)
        if state.config != config:
            log.warning("config differs from checkpoint %s; continuing with the checkpoint config", ckpt)
            config = state.config
        _truncate_log(log_path, state.step)
        log.info("resuming from %s at step %d", ckpt, state.step)
    else:
        norm = data.norm or compute_norm_stats(data.real_plates())
        state = new_state(config, norm)
        log_path.write_text("", encoding="utf-8")
    data.norm = state.norm
    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=1), encoding="utf-8")

    end = config.iterations if stop_after is None else min(stop_after, config.iterations)
    steps = range(state.step + 1, end + 1)
    pool = ThreadPoolExecutor(config.prefetch_workers) if config.prefetch_workers > 0 else None
    batches = pool.map(data.batch, steps) if pool else (data.batch(s) for s in steps)
    t0 = time.perf_counter()
    try:
        with open(log_path, "a", encoding="utf-8") as fh:
            for step, batch in zip(steps, batches):
                try:
                    report = train_step(state.model, batch, state.opt_g, state.opt_d, config)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"step {step}: {exc}") from exc
                state.step = step
                assert_finite_parameters(state.model)
                fh.write(report.to_json(step) + "\n")
                if step % config.checkpoint_interval == 0 or step == end:
                    fh.flush()
                    save_checkpoint(out_dir / "checkpoints" / f"step_{step:07d}.pt", state)
                if step % 100 == 0:
                    rate = (step - steps.start + 1) / (time.perf_counter() - t0)
                    log.info("step %d  total %.4f  %.2f it/s", step, report.total, rate)
    finally:
        if pool:
            pool.shutdown(wait=False, cancel_futures=True)
    return out_dir


def read_loss_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def with_overrides(config: TrainConfig, **overrides) -> TrainConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
