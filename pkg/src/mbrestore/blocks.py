"""Dual-residual fusion block and the shared stem built from it."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import ChannelStatsAttention, SEResBlock
from .errors import ConfigurationError

# Per-block (up-conv, down-conv) kernel sizes for the five stem blocks and
# the three post-stem refinement blocks. Chosen so block parameter counts
# rise through the stack; the stem totals ~4.1M at 96 channels.
STEM_KERNELS = ((5, 3), (5, 5), (5, 5), (7, 3), (7, 5))
TAP_KERNELS = ((7, 5), (7, 7), (7, 7))


class DualResBlock(nn.Module):
    """Fusion block operating on two interleaved residual streams.

    State is a pair (x, u): ``x`` at base resolution and ``u`` at exactly
    double resolution, both with the same channel count. The first
    operation lifts features into the upper stream (nearest x2 upsample +
    conv, residual into ``u``); the second returns to base resolution via
    two parallel paths, a strided conv and channel attention followed by
    2x2 average pooling, merged by a 3x3 conv (residual into ``x``). With
    ``fusion=False`` the attention path is dropped and the strided conv
    alone closes the loop.

    With every learnable parameter zeroed the block is the identity on
    both streams.
    """

    def __init__(self, channels: int, kernel_up: int = 3, kernel_down: int = 3,
                 reduction: int = 16, beta: float = 3.0, use_gap: bool = True,
                 use_tv: bool = True, fusion: bool = True):
        super().__init__()
        if kernel_up % 2 == 0 or kernel_down % 2 == 0:
            raise ConfigurationError("kernel sizes must be odd to preserve spatial dims")
        self.channels = channels
        self.fusion = bool(fusion)
        self.res = SEResBlock(channels, reduction, beta, use_gap, use_tv)
        self.up_conv = nn.Conv2d(channels, channels, kernel_up, padding=kernel_up // 2)
        self.down_conv = nn.Conv2d(channels, channels, kernel_down, stride=2,
                                   padding=kernel_down // 2)
        if self.fusion:
            self.attention = ChannelStatsAttention(channels, reduction, beta, use_gap, use_tv)
            self.merge = nn.Conv2d(2 * channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor, u: torch.Tensor):
        if u.shape[-2] != 2 * x.shape[-2] or u.shape[-1] != 2 * x.shape[-1]:
            raise ConfigurationError(
                f"upper stream must be exactly 2x the base stream, got {tuple(x.shape)} "
                f"and {tuple(u.shape)}")
        h = self.res(x)
        u = self.up_conv(F.interpolate(h, scale_factor=2, mode="nearest")) + u
        a = self.down_conv(u)
        if self.fusion:
            b = F.avg_pool2d(self.attention(u), 2)
            x = self.merge(torch.cat([a, b], dim=1)) + x
        else:
            x = a + x
        return x, u


class Stem(nn.Module):
    """Stack of dual-residual blocks threading both streams end to end."""

    def __init__(self, channels: int, kernels=STEM_KERNELS, reduction: int = 16,
                 beta: float = 3.0, use_gap: bool = True, use_tv: bool = True,
                 fusion: bool = True):
        super().__init__()
        self.blocks = nn.ModuleList([
            DualResBlock(channels, ku, kd, reduction, beta, use_gap, use_tv, fusion)
            for ku, kd in kernels
        ])

    def forward(self, x: torch.Tensor, u: torch.Tensor):
        for block in self.blocks:
            x, u = block(x, u)
        return x, u
