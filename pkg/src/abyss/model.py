"""Super-resolution generator and patch discriminator.

The generator works in the LR domain with a chain of residual-in-residual
dense blocks, up-samples with learned sub-pixel (pixel shuffle) stages, and
refines with two convolutions in the HR domain. The discriminator is a fully
convolutional patch classifier with no normalization layers; it emits a
pre-activation score map where each cell judges one receptive-field patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

LEAKY_SLOPE = 0.2
# Gain reduction applied to convs inside residual branches at init time;
# keeps the deep residual trunk near-identity early in training.
RESIDUAL_INIT_SCALE = 0.1


@dataclass(frozen=True)
class GeneratorConfig:
    n_rrdb: int = 16
    base_channels: int = 64
    growth_channels: int = 32
    scale: int = 8
    residual_scale: float = 0.2

    def __post_init__(self):
        if self.n_rrdb < 1:
            raise ValueError("n_rrdb must be at least 1")
        if self.scale < 2 or (self.scale & (self.scale - 1)) != 0:
            raise ValueError("scale must be a power of two >= 2")

    @property
    def n_up_stages(self) -> int:
        return int(math.log2(self.scale))


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    channel_schedule: tuple[int, ...] = (64, 128, 256, 512)
    kernel: int = 4
    leaky_slope: float = 0.2
    use_normalization: bool = False

    def __post_init__(self):
        if self.use_normalization:
            raise ValueError("normalization layers are not supported")
        if len(self.channel_schedule) < 2:
            raise ValueError("channel_schedule needs at least 2 entries")

    @property
    def strides(self) -> tuple[int, ...]:
        # Stride 2 for all but the last schedule conv, then stride-1 tail.
        return (2,) * (len(self.channel_schedule) - 1) + (1, 1)

    @property
    def receptive_field(self) -> int:
        rf = 1
        for s in reversed(self.strides):
            rf = rf * s + (self.kernel - s)
        return rf


class DenseBlock(nn.Module):
    """Five densely connected 3x3 convs; scaled residual over the block input."""

    def __init__(self, channels: int, growth: int, residual_scale: float):
        super().__init__()
        self.residual_scale = residual_scale
        self.conv = nn.ModuleList()
        for i in range(4):
            self.conv.append(nn.Conv2d(channels + growth * i, growth, 3, 1, 1))
        self.conv.append(nn.Conv2d(channels + growth * 4, channels, 3, 1, 1))

    def forward(self, x: Tensor) -> Tensor:
        feats = [x]
        for layer in self.conv[:-1]:
            feats.append(F.leaky_relu(layer(torch.cat(feats, 1)), LEAKY_SLOPE))
        out = self.conv[-1](torch.cat(feats, 1))
        return x + self.residual_scale * out


class RRDB(nn.Module):
    """Three dense blocks in series, combined with a scaled outer residual."""

    def __init__(self, channels: int, growth: int, residual_scale: float):
        super().__init__()
        self.residual_scale = residual_scale
        self.dense = nn.ModuleList(
            DenseBlock(channels, growth, residual_scale) for _ in range(3)
        )

    def forward(self, x: Tensor) -> Tensor:
        out = x
        for block in self.dense:
            out = block(out)
        return x + self.residual_scale * out


class UpStage(nn.Module):
    """One x2 sub-pixel up-sampling stage: conv to 4x channels, shuffle, lrelu."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels * 4, 3, 1, 1)

    def forward(self, x: Tensor) -> Tensor:
        return F.leaky_relu(F.pixel_shuffle(self.conv(x), 2), LEAKY_SLOPE)


class Generator(nn.Module):
    """LR -> HR network: head conv, RRDB trunk with global residual,
    log2(scale) sub-pixel stages, two HR-domain convs, linear output."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        c, g = cfg.base_channels, cfg.growth_channels
        self.head = nn.Conv2d(3, c, 3, 1, 1)
        self.rrdb = nn.ModuleList(
            RRDB(c, g, cfg.residual_scale) for _ in range(cfg.n_rrdb)
        )
        self.trunk = nn.Conv2d(c, c, 3, 1, 1)
        self.up = nn.ModuleList(UpStage(c) for _ in range(cfg.n_up_stages))
        self.hr = nn.ModuleList([nn.Conv2d(c, c, 3, 1, 1), nn.Conv2d(c, 3, 3, 1, 1)])

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-2] < 4 or x.shape[-1] < 4:
            raise ValueError(f"input spatial dims must be >= 4x4, got {tuple(x.shape)}")
        fea = self.head(x)
        out = fea
        for block in self.rrdb:
            out = block(out)
        fea = fea + self.trunk(out)
        for stage in self.up:
            fea = stage(fea)
        fea = F.leaky_relu(self.hr[0](fea), LEAKY_SLOPE)
        return self.hr[1](fea)


class Discriminator(nn.Module):
    """Patch discriminator: 4x4 convs, strides (2,..,2,1,1), leaky ReLU,
    no normalization, 1-channel pre-activation score map output."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        chans = (cfg.in_channels,) + cfg.channel_schedule + (1,)
        self.conv = nn.ModuleList()
        for c_in, c_out, stride in zip(chans[:-1], chans[1:], cfg.strides):
            self.conv.append(nn.Conv2d(c_in, c_out, cfg.kernel, stride, 1))

    def forward(self, img: Tensor) -> Tensor:
        rf = self.cfg.receptive_field
        if img.shape[-2] < rf or img.shape[-1] < rf:
            raise ValueError(
                f"input {tuple(img.shape[-2:])} smaller than the "
                f"{rf}x{rf} receptive field"
            )
        out = img
        for layer in self.conv[:-1]:
            out = F.leaky_relu(layer(out), self.cfg.leaky_slope)
        return self.conv[-1](out)


def _residual_branch_convs(gen: Generator) -> set[str]:
    names = {"trunk"}
    for i, block in enumerate(gen.rrdb):
        for j, db in enumerate(block.dense):
            for k in range(len(db.conv)):
                names.add(f"rrdb.{i}.dense.{j}.conv.{k}")
    return names


def _init_conv(conv: nn.Conv2d, gen: torch.Generator, scale: float = 1.0) -> None:
    # Kaiming-normal std for leaky ReLU, drawn from the passed generator so
    # initialization is reproducible under seed.
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2))
    std = scale * gain / math.sqrt(fan_in)
    with torch.no_grad():
        conv.weight.normal_(0.0, std, generator=gen)
        conv.bias.zero_()


def init_generator(cfg: GeneratorConfig, seed: int) -> Generator:
    """Build a generator with seeded init; residual-branch convs get 0.1 gain."""
    model = Generator(cfg)
    rng = torch.Generator().manual_seed(seed)
    scaled = _residual_branch_convs(model)
    for name, module in model.named_modules():
        if isinstance(module, nn.Conv2d):
            _init_conv(module, rng, RESIDUAL_INIT_SCALE if name in scaled else 1.0)
    return model


def init_discriminator(cfg: DiscriminatorConfig, seed: int) -> Discriminator:
    """Build a discriminator with seeded Kaiming-normal init."""
    model = Discriminator(cfg)
    rng = torch.Generator().manual_seed(seed)
    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            _init_conv(module, rng)
    return model


def score_map_dims(cfg: DiscriminatorConfig, h: int, w: int) -> tuple[int, int]:
    """Output score-map dims for an h x w input (padding 1 at every layer)."""
    for stride in cfg.strides:
        h = (h + 2 - cfg.kernel) // stride + 1
        w = (w + 2 - cfg.kernel) // stride + 1
    return h, w
