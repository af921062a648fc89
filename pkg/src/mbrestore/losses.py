"""Structural similarity and the combined restoration loss."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ConfigurationError


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float32,
                    device=None) -> torch.Tensor:
    """Normalized 2-D Gaussian window."""
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    window = g[:, None] * g[None, :]
    return window / window.sum()


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 3:
        return x.unsqueeze(0)
    if x.ndim == 4:
        return x
    raise ConfigurationError(f"expected (C, H, W) or (B, C, H, W), got {tuple(x.shape)}")


def ssim(a: torch.Tensor, b: torch.Tensor, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> torch.Tensor:
    """Mean structural similarity between two image batches in [0, 1].

    Gaussian-weighted 11x11 windows (sigma 1.5), valid positions only,
    computed per channel and averaged. Returns a scalar tensor in [-1, 1];
    differentiable, so it doubles as the training criterion.
    """
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    a = _as_batch(a)
    b = _as_batch(b)
    if a.shape[-2] < window_size or a.shape[-1] < window_size:
        raise ConfigurationError(
            f"images must be at least {window_size}x{window_size} for SSIM")
    channels = a.shape[1]
    window = gaussian_window(window_size, sigma, dtype=a.dtype, device=a.device)
    window = window.expand(channels, 1, window_size, window_size)

    def filt(x):
        return F.conv2d(x, window, groups=channels)

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def restoration_loss(pred: torch.Tensor, target: torch.Tensor,
                     ssim_weight: float = 1.1, l1_weight: float = 0.75) -> torch.Tensor:
    """Weighted sum of SSIM dissimilarity and mean absolute error.

    ``ssim_weight * (1 - ssim) + l1_weight * mean|pred - target|``; zero
    exactly when the images match, non-negative otherwise.
    """
    if pred.shape != target.shape:
        raise ConfigurationError(
            f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (ssim_weight * (1.0 - ssim(pred, target))
            + l1_weight * (pred - target).abs().mean())
