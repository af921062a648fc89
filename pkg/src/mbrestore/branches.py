"""Factor-specific input branches and output heads.

All branches map a normalized RGB image to stem features and back. The
working resolution differs per factor: the rain branch runs at 1/2 of the
input resolution, every other branch at 1/4, with the matching head
upscaling by the same amount so resolution closes exactly.

Channel plans are expressed in terms of a base width (96 in the reference
configuration, divisible by 12): the intermediate widths are base/3,
base/2 and 2*base/3.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError


def _check_base(base: int) -> None:
    if base % 12 != 0 or base <= 0:
        raise ConfigurationError(f"base channel width must be a positive multiple of 12, got {base}")


class MinimalInputBranch(nn.Module):
    """Three-conv input stem mapping an RGB image to 1/4-resolution features.

    Channels base/2 -> base -> base with strides 1, 2, 2. The final conv is
    grouped (groups=3), keeping the branch at ~0.07M parameters at the
    reference width.
    """

    def __init__(self, base: int = 96):
        super().__init__()
        _check_base(base)
        half = base // 2
        self.conv1 = nn.Conv2d(3, half, 3, padding=1)
        self.conv2 = nn.Conv2d(half, base, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(base, base, 3, stride=2, padding=1, groups=3)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.conv1(img))
        h = F.relu(self.conv2(h))
        return F.relu(self.conv3(h))


class ConvLSTMCell(nn.Module):
    """Convolutional LSTM cell: one 3x3 conv computes the four gates."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.gates = nn.Conv2d(2 * channels, 4 * channels, 3, padding=1)

    def initial_state(self, like: torch.Tensor):
        """Zero hidden/cell maps shaped like the cell input."""
        z = like.new_zeros(like.shape[:-3] + (self.channels,) + like.shape[-2:])
        return z, z.clone()

    def forward(self, x: torch.Tensor, state):
        h_prev, c_prev = state
        i, f, g, o = torch.split(self.gates(torch.cat([x, h_prev], dim=1)),
                                 self.channels, dim=1)
        c = torch.sigmoid(f) * c_prev + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, (h, c)


class RainInputBranch(nn.Module):
    """ConvLSTM front end feeding a 1/2-resolution feature map.

    conv(base/3) -> ConvLSTM(base/3) -> conv(2*base/3) -> pixel-unshuffle x1/2
    -> conv(base); all 3x3. The LSTM state is owned by the caller and
    zero-initialized at the start of each restoration invocation.
    """

    def __init__(self, base: int = 96):
        super().__init__()
        _check_base(base)
        third = base // 3
        two_thirds = 2 * base // 3
        self.conv_in = nn.Conv2d(3, third, 3, padding=1)
        self.lstm = ConvLSTMCell(third)
        self.conv_mid = nn.Conv2d(third, two_thirds, 3, padding=1)
        self.unshuffle = nn.PixelUnshuffle(2)
        self.conv_out = nn.Conv2d(4 * two_thirds, base, 3, padding=1)

    def forward(self, img: torch.Tensor, state=None):
        h = F.relu(self.conv_in(img))
        if state is None:
            state = self.lstm.initial_state(h)
        h, state = self.lstm(h, state)
        h = F.relu(self.conv_mid(h))
        h = F.relu(self.conv_out(self.unshuffle(h)))
        return h, state


class ScaleRecurrentInputBranch(nn.Module):
    """Selective-sharing multi-scale input branch (13 convs, all 3x3 + ReLU).

    Used for motion blur and JPEG artifacts, which are restored over three
    scales of the input. The first conv of each group is scale-specific;
    the remaining convs are shared across scales. Scales 1 and 2 take the
    previous scale's output concatenated channelwise with the current
    input.
    """

    SCALES = 3

    def __init__(self, base: int = 96):
        super().__init__()
        _check_base(base)
        third = base // 3
        two_thirds = 2 * base // 3
        self.entry1 = nn.ModuleList([
            nn.Conv2d(3 if s == 0 else 6, third, 3, padding=1) for s in range(self.SCALES)
        ])
        self.mid1 = nn.ModuleList([nn.Conv2d(third, third, 3, padding=1) for _ in range(2)])
        self.entry2 = nn.ModuleList([
            nn.Conv2d(4 * third, two_thirds, 3, padding=1) for _ in range(self.SCALES)
        ])
        self.mid2 = nn.ModuleList([nn.Conv2d(two_thirds, two_thirds, 3, padding=1)
                                   for _ in range(2)])
        self.entry3 = nn.ModuleList([
            nn.Conv2d(4 * two_thirds, base, 3, padding=1) for _ in range(self.SCALES)
        ])
        self.unshuffle = nn.PixelUnshuffle(2)

    def forward(self, img: torch.Tensor, scale_index: int, prev=None) -> torch.Tensor:
        if scale_index not in range(self.SCALES):
            raise ConfigurationError(f"scale_index must be 0..2, got {scale_index}")
        if scale_index > 0 and prev is None:
            raise ConfigurationError(
                f"scale {scale_index} requires the previous scale's output")
        if scale_index == 0 and prev is not None:
            raise ConfigurationError("scale 0 takes no previous output")
        h = img if prev is None else torch.cat([img, prev], dim=1)
        h = F.relu(self.entry1[scale_index](h))
        for conv in self.mid1:
            h = F.relu(conv(h))
        h = self.unshuffle(h)
        h = F.relu(self.entry2[scale_index](h))
        for conv in self.mid2:
            h = F.relu(conv(h))
        h = self.unshuffle(h)
        return F.relu(self.entry3[scale_index](h))


class MinimalHead(nn.Module):
    """Two upsample+conv units then a tanh residual conv (x4 upscale).

    Channels base -> base/2 -> 3 across the three convs; the residual is
    bounded in (-1, 1) by the tanh.
    """

    def __init__(self, base: int = 96):
        super().__init__()
        _check_base(base)
        self.up_conv1 = nn.Conv2d(base, base, 3, padding=1)
        self.up_conv2 = nn.Conv2d(base, base // 2, 3, padding=1)
        self.conv_out = nn.Conv2d(base // 2, 3, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.up_conv1(F.interpolate(x, scale_factor=2, mode="nearest")))
        h = F.relu(self.up_conv2(F.interpolate(h, scale_factor=2, mode="nearest")))
        return torch.tanh(self.conv_out(h))


class RainHead(nn.Module):
    """Single upsample unit mirroring the rain input branch (x2 upscale)."""

    def __init__(self, base: int = 96):
        super().__init__()
        _check_base(base)
        self.shuffle = nn.PixelShuffle(2)
        self.conv1 = nn.Conv2d(base // 4, base, 3, padding=1)
        self.conv2 = nn.Conv2d(base, base // 2, 3, padding=1)
        self.conv_out = nn.Conv2d(base // 2, 3, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.conv1(self.shuffle(x)))
        h = F.relu(self.conv2(h))
        return torch.tanh(self.conv_out(h))


class MultiScaleHead(nn.Module):
    """Three-scale head with scale-specific upsampling paths (x4 upscale).

    Mirrors the scale-recurrent input branch: each group starts with a
    scale-specific upsample unit (conv + pixel shuffle, no ReLU on the
    upsampling conv) and a scale-specific conv, followed by two shared
    convs. Channel plan base -> 2*base/3 then 2*base/3 -> base/3, closed
    by a shared tanh conv to 3 channels.
    """

    SCALES = 3

    def __init__(self, base: int = 96):
        super().__init__()
        _check_base(base)
        third = base // 3
        two_thirds = 2 * base // 3
        self.up1 = nn.ModuleList([nn.Conv2d(base, base, 3, padding=1)
                                  for _ in range(self.SCALES)])
        self.in1 = nn.ModuleList([nn.Conv2d(base // 4, two_thirds, 3, padding=1)
                                  for _ in range(self.SCALES)])
        self.mid1 = nn.ModuleList([nn.Conv2d(two_thirds, two_thirds, 3, padding=1)
                                   for _ in range(2)])
        self.up2 = nn.ModuleList([nn.Conv2d(two_thirds, two_thirds, 3, padding=1)
                                  for _ in range(self.SCALES)])
        self.in2 = nn.ModuleList([nn.Conv2d(two_thirds // 4, third, 3, padding=1)
                                  for _ in range(self.SCALES)])
        self.mid2 = nn.ModuleList([nn.Conv2d(third, third, 3, padding=1)
                                   for _ in range(2)])
        self.conv_out = nn.Conv2d(third, 3, 3, padding=1)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x: torch.Tensor, scale_index: int) -> torch.Tensor:
        if scale_index not in range(self.SCALES):
            raise ConfigurationError(f"scale_index must be 0..2, got {scale_index}")
        h = self.shuffle(self.up1[scale_index](x))
        h = F.relu(self.in1[scale_index](h))
        for conv in self.mid1:
            h = F.relu(conv(h))
        h = self.shuffle(self.up2[scale_index](h))
        h = F.relu(self.in2[scale_index](h))
        for conv in self.mid2:
            h = F.relu(conv(h))
        return torch.tanh(self.conv_out(h))
