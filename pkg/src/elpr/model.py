"""DGNet computation graph.

Two shared encoders (text side and discriminator side), a background
encoder, the text-to-plate and plate-to-text generators, and a 1x1 linear
head that turns the discriminator encoder's features into a patch score map.
The discriminator encoder's features are handed to the plate-to-text
generator as well, so both uses go through a single module.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn

from .errors import ShapeMismatch

ACTIVATIONS = {
    "relu": lambda: nn.ReLU(),
    "lrelu": lambda: nn.LeakyReLU(0.2),
    "silu": lambda: nn.SiLU(),
}


@dataclass(frozen=True)
class ArchConfig:
    image_size: int = 256
    text_channels: int = 64
    bg_channels: int = 64
    depth: int = 2
    res_blocks: int = 4
    stem_kernel: int = 7
    activation: str = "relu"
    # "pixel": tanh mapped onto the normalized image of [0, 1]; "tanh": raw [-1, 1].
    head: str = "pixel"
    tie_shared_encoders: bool = False
    text_discriminator: bool = False

    def __post_init__(self):
        for name, ch in (("text_channels", self.text_channels), ("bg_channels", self.bg_channels)):
            if ch % (2 ** self.depth):
                raise ValueError(f"{name}={ch} must be divisible by 2**depth={2 ** self.depth}")
        if self.image_size % (2 ** self.depth):
            raise ValueError("image_size must be divisible by 2**depth")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head not in ("pixel", "tanh"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def feature_size(self) -> int:
        return self.image_size // 2 ** self.depth

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Encoder(nn.Module):
    """Stem conv, then ``depth`` stride-2 convs doubling the width up to ``out_channels``."""

    def __init__(self, out_channels: int, depth: int, stem_kernel: int, activation: str):
        super().__init__()
        width = out_channels // 2 ** depth
        layers = [
            nn.Conv2d(3, width, stem_kernel, padding=stem_kernel // 2, padding_mode="reflect", bias=False),
            nn.InstanceNorm2d(width),
            ACTIVATIONS[activation](),
        ]
        for _ in range(depth):
            layers += [
                nn.Conv2d(width, width * 2, 3, stride=2, padding=1, padding_mode="reflect", bias=False),
                nn.InstanceNorm2d(width * 2),
                ACTIVATIONS[activation](),
            ]
            width *= 2
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        return self.layers(x)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, activation: str):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect", bias=False),
            nn.InstanceNorm2d(channels),
            ACTIVATIONS[activation](),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect", bias=False),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """Residual trunk over concatenated features, nearest-upsample decoder, tanh output."""

    def __init__(self, in_channels: int, depth: int, res_blocks: int, stem_kernel: int, activation: str):
        super().__init__()
        layers = [ResidualBlock(in_channels, activation) for _ in range(res_blocks)]
        width = in_channels
        for _ in range(depth):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(width, width // 2, 3, padding=1, padding_mode="reflect", bias=False),
                nn.InstanceNorm2d(width // 2),
                ACTIVATIONS[activation](),
            ]
            width //= 2
        layers += [nn.Conv2d(width, 3, stem_kernel, padding=stem_kernel // 2, padding_mode="reflect"), nn.Tanh()]
        self.layers = nn.Sequential(*layers)

    def forward(self, features):
        return self.layers(features)


@dataclass
class GenerationOutputs:
    y_translation: torch.Tensor
    x_reconstruction: torch.Tensor
    x_cycle: torch.Tensor
    d_real: torch.Tensor
    d_fake: torch.Tensor


class DGNet(nn.Module):
    def __init__(self, config: ArchConfig = ArchConfig()):
        super().__init__()
        c = config
        self.config = c
        enc = lambda ch: Encoder(ch, c.depth, c.stem_kernel, c.activation)  # noqa: E731
        self.e_share2 = enc(c.text_channels)
        self.e_share1 = self.e_share2 if c.tie_shared_encoders else enc(c.text_channels)
        self.e_bg = enc(c.bg_channels)
        gen = lambda: Generator(c.text_channels + c.bg_channels, c.depth, c.res_blocks, c.stem_kernel, c.activation)  # noqa: E731
        self.g_xy = gen()
        self.g_yx = gen()
        self.classifier = nn.Conv2d(c.text_channels, 1, 1)
        if c.text_discriminator:
            self.e_text_disc = enc(c.text_channels)
            self.text_classifier = nn.Conv2d(c.text_channels, 1, 1)
        self.register_buffer("norm_mean", torch.full((3,), 0.5))
        self.register_buffer("norm_std", torch.full((3,), 0.5))

    # -- parameter groups ------------------------------------------------

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups = {
            "e_share1": list(self.e_share1.parameters()),
            "e_share2": list(self.e_share2.parameters()),
            "e_bg": list(self.e_bg.parameters()),
            "g_xy": list(self.g_xy.parameters()),
            "g_yx": list(self.g_yx.parameters()),
            "classifier": list(self.classifier.parameters()),
        }
        if self.config.tie_shared_encoders:
            del groups["e_share1"]
        if self.config.text_discriminator:
            groups["text_discriminator"] = list(self.e_text_disc.parameters()) + list(self.text_classifier.parameters())
        return groups

    def generator_parameters(self) -> list[nn.Parameter]:
        mods = [self.e_bg, self.g_xy, self.g_yx]
        if not self.config.tie_shared_encoders:
            mods.insert(0, self.e_share1)
        return [p for m in mods for p in m.parameters()]

    def discriminator_parameters(self) -> list[nn.Parameter]:
        mods = [self.e_share2, self.classifier]
        if self.config.text_discriminator:
            mods += [self.e_text_disc, self.text_classifier]
        return [p for m in mods for p in m.parameters()]

    # -- normalization ---------------------------------------------------

    def set_norm_stats(self, mean, std) -> None:
        with torch.no_grad():
            self.norm_mean.copy_(torch.as_tensor(mean, dtype=self.norm_mean.dtype))
            self.norm_std.copy_(torch.as_tensor(std, dtype=self.norm_std.dtype))

    def normalize(self, pixels01: torch.Tensor) -> torch.Tensor:
        return (pixels01 - self.norm_mean.view(1, 3, 1, 1)) / self.norm_std.view(1, 3, 1, 1)

    def denormalize(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.norm_std.view(1, 3, 1, 1) + self.norm_mean.view(1, 3, 1, 1)

    def _head(self, raw: torch.Tensor) -> torch.Tensor:
        if self.config.head == "tanh":
            return raw
        return self.normalize((raw + 1.0) * 0.5)

    def _check(self, name: str, img: torch.Tensor) -> None:
        s = self.config.image_size
        if img.dim() != 4 or tuple(img.shape[1:]) != (3, s, s):
            raise ShapeMismatch(f"{name} must be (N, 3, {s}, {s}), got {tuple(img.shape)}")

    # -- operations ------------------------------------------------------

    def encode_text(self, x: torch.Tensor) -> torch.Tensor:
        self._check("x", x)
        return self.e_share1(x)

    def encode_background(self, img: torch.Tensor) -> torch.Tensor:
        self._check("background", img)
        return self.e_bg(img)

    def translate(self, x: torch.Tensor, y_bg: torch.Tensor) -> torch.Tensor:
        self._check("y_bg", y_bg)
        feats = torch.cat([self.encode_text(x), self.encode_background(y_bg)], dim=1)
        return self._head(self.g_xy(feats))

    def reconstruct(self, x: torch.Tensor, x_bg: torch.Tensor) -> torch.Tensor:
        self._check("x_bg", x_bg)
        feats = torch.cat([self.encode_text(x), self.encode_background(x_bg)], dim=1)
        return self._head(self.g_yx(feats))

    def discriminate(self, img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check("image", img)
        shared = self.e_share2(img)
        return self.classifier(shared), shared

    def discriminate_text(self, img: torch.Tensor) -> torch.Tensor:
        self._check("image", img)
        return self.text_classifier(self.e_text_disc(img))

    def cycle_back(self, y_translation: torch.Tensor, x_bg: torch.Tensor, shared: torch.Tensor | None = None):
        """Map a synthetic plate back to a text image.

        ``shared`` lets callers pass the discriminator-encoder features they
        already computed for ``y_translation``.
        """
        if shared is None:
            _, shared = self.discriminate(y_translation)
        feats = torch.cat([shared, self.encode_background(x_bg)], dim=1)
        return self._head(self.g_yx(feats))

    def forward_all(self, x, x_bg, y_bg, y_real) -> GenerationOutputs:
        y_t = self.translate(x, y_bg)
        d_fake, shared = self.discriminate(y_t)
        d_real, _ = self.discriminate(y_real)
        return GenerationOutputs(
            y_translation=y_t,
            x_reconstruction=self.reconstruct(x, x_bg),
            x_cycle=self.cycle_back(y_t, x_bg, shared),
            d_real=d_real,
            d_fake=d_fake,
        )

    forward = forward_all


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in {id(p): p for p in model.parameters()}.values())
