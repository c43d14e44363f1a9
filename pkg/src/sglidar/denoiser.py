"""Noise-prediction U-Net for range images, with semantic projector head.

Range images wrap around in azimuth, so every convolution pads circularly
along width and with zeros along height. The semantic condition enters as
K one-hot channels concatenated to the 2-channel image (a null condition is
all zeros). The encoder bottleneck is exposed both as a feature extractor
for evaluation and as the input to the 3-layer projector used by the
alignment loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ValidationError
from .rng import generator


@dataclass(frozen=True)
class DenoiserConfig:
    num_classes: int
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    blocks_per_level: int = 2
    norm_groups: int = 8
    time_dim: int = 128
    projector_hidden: int = 64

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        if self.base_channels % self.norm_groups != 0:
            raise ValidationError("base_channels must be divisible by norm_groups")
        if self.time_dim % 2 != 0:
            raise ValidationError("time_dim must be even")
        if not self.channel_multipliers or any(
            m <= 0 for m in self.channel_multipliers
        ):
            raise ValidationError("channel multipliers must be positive")

    @property
    def in_channels(self) -> int:
        return 2 + self.num_classes

    @property
    def levels(self) -> int:
        return len(self.channel_multipliers)

    @property
    def downsample_factor(self) -> int:
        return 2 ** (self.levels - 1)

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * self.channel_multipliers[-1]


def time_embedding(t, dim: int) -> torch.Tensor:
    """Sinusoidal step embedding: dim/2 sines + dim/2 cosines, base 10000.

    Accepts an int or a 1-D integer tensor; returns float64 (callers cast).
    """
    if dim % 2 != 0:
        raise ValidationError("embedding dim must be even")
    t = torch.as_tensor(t, dtype=torch.float64)
    half = dim // 2
    if half > 1:
        exponents = -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / (
            half - 1
        )
        freqs = torch.exp(exponents)
    else:
        freqs = torch.ones(1, dtype=torch.float64)
    args = t.reshape(-1, 1) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb.reshape(*t.shape, dim) if t.ndim else emb.reshape(dim)


class CircularConv2d(nn.Module):
    """Conv2d padding circularly in width and with zeros in height."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1):
        super().__init__()
        self.pad = kernel // 2
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=0)

    def forward(self, x):
        if self.pad:
            x = F.pad(x, (self.pad, self.pad, 0, 0), mode="circular")
            x = F.pad(x, (0, 0, self.pad, self.pad))
        return self.conv(x)


class ResidualBlock(nn.Module):
    """norm -> silu -> conv, timestep bias, norm -> silu -> conv, skip."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = CircularConv2d(in_ch, out_ch)
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, out_ch), nn.SiLU(), nn.Linear(out_ch, out_ch)
        )
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = CircularConv2d(out_ch, out_ch)
        self.skip = (
            nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        )

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_mlp(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class Upsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = CircularConv2d(ch, ch)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class SemanticProjector(nn.Module):
    """Three circular 3x3 convolutions mapping the bottleneck to K channels."""

    def __init__(self, in_ch: int, hidden: int, num_classes: int):
        super().__init__()
        self.conv1 = CircularConv2d(in_ch, hidden)
        self.conv2 = CircularConv2d(hidden, hidden)
        self.conv3 = CircularConv2d(hidden, num_classes)

    def forward(self, x):
        x = F.silu(self.conv1(x))
        x = F.silu(self.conv2(x))
        return self.conv3(x)


class DenoiserOutput(NamedTuple):
    eps: torch.Tensor  # (B, 2, H, W) noise prediction
    latent: torch.Tensor  # (B, C_bottleneck, H/f, W/f) encoder bottleneck
    semantic: torch.Tensor  # (B, K, H/f, W/f) projector output


class Denoiser(nn.Module):
    """U-Net noise predictor with exposed bottleneck and projector head."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        chans = [config.base_channels * m for m in config.channel_multipliers]
        groups = config.norm_groups
        tdim = config.time_dim

        self.stem = CircularConv2d(config.in_channels, chans[0])
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for i, ch in enumerate(chans):
            prev = chans[0] if i == 0 else chans[i - 1]
            level = nn.ModuleList()
            for j in range(config.blocks_per_level):
                level.append(ResidualBlock(prev if j == 0 else ch, ch, tdim, groups))
            self.down_blocks.append(level)
            if i + 1 < len(chans):
                self.downsamples.append(CircularConv2d(ch, ch, stride=2))

        mid = chans[-1]
        self.mid_blocks = nn.ModuleList(
            [ResidualBlock(mid, mid, tdim, groups) for _ in range(2)]
        )
        self.projector = SemanticProjector(
            mid, config.projector_hidden, config.num_classes
        )

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i in reversed(range(len(chans))):
            ch = chans[i]
            above = mid if i == len(chans) - 1 else chans[i + 1]
            level = nn.ModuleList()
            for j in range(config.blocks_per_level):
                in_ch = (above + ch) if j == 0 else ch
                level.append(ResidualBlock(in_ch, ch, tdim, groups))
            self.up_blocks.append(level)
            if i > 0:
                self.upsamples.append(Upsample(ch))

        self.out_norm = nn.GroupNorm(groups, chans[0])
        self.out_conv = nn.Conv2d(chans[0], 2, 1)

    def init_parameters(self, seed: int) -> None:
        """Deterministic re-initialization keyed by (seed, parameter name).

        Convolution/linear weights are Gaussian with 1/sqrt(fan_in) scale,
        norms are identity, biases zero, and the output convolution starts
        at zero so the untrained model predicts zero noise.
        """
        for name, p in self.named_parameters():
            with torch.no_grad():
                if name.startswith("out_conv"):
                    p.zero_()
                elif p.ndim >= 2:
                    fan_in = p[0].numel()
                    draw = generator(seed, "init", name).standard_normal(
                        tuple(p.shape)
                    )
                    p.copy_(torch.from_numpy(draw / math.sqrt(fan_in)).to(p.dtype))
                elif "norm" in name and name.endswith("weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()

    def _check_inputs(self, x, cond):
        f = self.config.downsample_factor
        if x.ndim != 4 or x.shape[1] != 2:
            raise ValidationError(f"x must be (B, 2, H, W), got {tuple(x.shape)}")
        if x.shape[2] % f or x.shape[3] % f:
            raise ValidationError(
                f"H and W must be divisible by {f}, got {tuple(x.shape[2:])}"
            )
        if cond is not None:
            expect = (x.shape[0], self.config.num_classes, x.shape[2], x.shape[3])
            if tuple(cond.shape) != expect:
                raise ValidationError(
                    f"cond must have shape {expect}, got {tuple(cond.shape)}"
                )

    def forward(self, x, t, cond=None) -> DenoiserOutput:
        """Predict noise for x_t at step(s) t under an optional condition.

        cond is a (B, K, H, W) one-hot tensor or None for the null
        condition (equivalent to an all-zeros tensor).
        """
        self._check_inputs(x, cond)
        dtype = self.out_conv.weight.dtype
        b = x.shape[0]
        if cond is None:
            cond = torch.zeros(
                (b, self.config.num_classes, x.shape[2], x.shape[3]), dtype=dtype
            )
        t = torch.as_tensor(t, dtype=torch.long)
        if t.ndim == 0:
            t = t.expand(b)
        temb = time_embedding(t, self.config.time_dim).to(dtype)

        h = self.stem(torch.cat([x.to(dtype), cond.to(dtype)], dim=1))
        skips = []
        for i, level in enumerate(self.down_blocks):
            for block in level:
                h = block(h, temb)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)
        for block in self.mid_blocks:
            h = block(h, temb)
        latent = h
        semantic = self.projector(latent)
        for i, level in enumerate(self.up_blocks):
            h = torch.cat([h, skips[len(skips) - 1 - i]], dim=1)
            for block in level:
                h = block(h, temb)
            if i < len(self.upsamples):
                h = self.upsamples[i](h)
        eps = self.out_conv(F.silu(self.out_norm(h)))

        if not torch.isfinite(eps).all():
            raise RuntimeError("non-finite activation in noise prediction")
        return DenoiserOutput(eps, latent, semantic)


def parameter_tensors(model: nn.Module) -> dict[str, np.ndarray]:
    """Named parameters as float32 numpy arrays (checkpoint payload)."""
    return {
        name: p.detach().cpu().numpy().astype(np.float32)
        for name, p in model.named_parameters()
    }


def load_parameter_tensors(model: nn.Module, tensors: dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(tensors))
    if missing:
        raise ValidationError(f"checkpoint is missing tensors: {missing[:3]}...")
    for name, p in params.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(p.shape):
            raise ValidationError(
                f"checkpoint tensor {name} has shape {arr.shape}, expected "
                f"{tuple(p.shape)}"
            )
        with torch.no_grad():
            p.copy_(torch.from_numpy(arr).to(p.dtype))
