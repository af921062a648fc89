"""Channel statistics and the attention module driven by them.

Channel weights are produced from two per-channel aggregates of the
feature map: the spatial mean (global average pooling) and the mean
beta-powered absolute spatial derivative (a total-variation statistic).
Both feed the usual squeeze-excite FC pipeline.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError


def _check_map(x: torch.Tensor) -> None:
    if x.ndim < 3:
        raise ConfigurationError(f"expected a (..., C, H, W) feature map, got shape {tuple(x.shape)}")
    if x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ConfigurationError(f"empty spatial extent in shape {tuple(x.shape)}")


def channel_gap(x: torch.Tensor) -> torch.Tensor:
    """Per-channel spatial mean of a (..., C, H, W) feature map."""
    _check_map(x)
    return x.mean(dim=(-2, -1))


def channel_tv(x: torch.Tensor, beta: float = 3.0) -> torch.Tensor:
    """Per-channel total-variation statistic of a (..., C, H, W) map.

    Mean of |vertical difference|**beta plus mean of |horizontal
    difference|**beta, each averaged over its own derivative map. A
    derivative map that is empty (H == 1 or W == 1) contributes zero.
    """
    _check_map(x)
    if beta <= 0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    out = x.new_zeros(x.shape[:-2])
    if x.shape[-2] > 1:
        out = out + (x[..., 1:, :] - x[..., :-1, :]).abs().pow(beta).mean(dim=(-2, -1))
    if x.shape[-1] > 1:
        out = out + (x[..., :, 1:] - x[..., :, :-1]).abs().pow(beta).mean(dim=(-2, -1))
    return out


class ChannelStatsAttention(nn.Module):
    """Channel attention fed by GAP and/or TV statistics.

    The selected statistics are concatenated into one vector and mapped
    through FC -> ReLU -> FC -> sigmoid; the resulting weights in (0, 1)
    scale the input channels. With both statistics disabled the module is
    the identity and holds no parameters.

    Args:
        channels: number of input channels C.
        reduction: bottleneck divisor r; hidden width is max(1, C // r).
        beta: exponent applied to absolute spatial derivatives.
        use_gap / use_tv: which statistics to feed the FC pipeline.
    """

    def __init__(self, channels: int, reduction: int = 16, beta: float = 3.0,
                 use_gap: bool = True, use_tv: bool = True):
        super().__init__()
        if channels < 1 or reduction < 1:
            raise ConfigurationError("channels and reduction must be positive")
        self.channels = channels
        self.beta = float(beta)
        self.use_gap = bool(use_gap)
        self.use_tv = bool(use_tv)
        n_stats = int(self.use_gap) + int(self.use_tv)
        self.active = n_stats > 0
        if self.active:
            hidden = max(1, channels // reduction)
            self.fc1 = nn.Linear(n_stats * channels, hidden)
            self.fc2 = nn.Linear(hidden, channels)
            nn.init.zeros_(self.fc1.bias)
            nn.init.zeros_(self.fc2.bias)

    def weights(self, x: torch.Tensor) -> torch.Tensor:
        """Channel weights in (0, 1) for a (..., C, H, W) map."""
        stats = []
        if self.use_gap:
            stats.append(channel_gap(x))
        if self.use_tv:
            stats.append(channel_tv(x, self.beta))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(torch.cat(stats, dim=-1)))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.channels:
            raise ConfigurationError(
                f"attention built for {self.channels} channels, got {x.shape[-3]}")
        if not self.active:
            return x
        return x * self.weights(x).unsqueeze(-1).unsqueeze(-1)


class SEResBlock(nn.Module):
    """Residual block with stats-driven channel attention on its branch.

    y = x + attention(conv2(relu(conv1(x)))); both convs are 3x3 and
    preserve channel count and spatial size.
    """

    def __init__(self, channels: int, reduction: int = 16, beta: float = 3.0,
                 use_gap: bool = True, use_tv: bool = True):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.attention = ChannelStatsAttention(channels, reduction, beta, use_gap, use_tv)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.attention(self.conv2(F.relu(self.conv1(x))))
