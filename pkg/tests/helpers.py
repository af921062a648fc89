"""Shared test utilities: instance generators and the finite-difference oracle."""

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from scipy.ndimage import gaussian_filter

from mbrestore.data import save_image, write_manifest
from mbrestore.degrade import (BlurParams, HazeParams, JpegParams, RainParams,
                               synth_blur, synth_haze, synth_jpeg, synth_rain,
                               vertical_gradient_depth)
from mbrestore.factors import Factor
from mbrestore.network import ModelConfig


def tiny_model_config(**overrides) -> ModelConfig:
    """Smallest architecture used for structural and training tests."""
    defaults = dict(base_channels=12, reduction=4,
                    stem_kernels=((3, 3),) * 5, tap_kernels=((3, 3),) * 3)
    defaults.update(overrides)
    return ModelConfig(**defaults)


def random_image_batch(rng, batch=1, size=64) -> torch.Tensor:
    """[0, 1] RGB batch from a numpy Generator."""
    arr = rng.random((batch, 3, size, size), dtype=np.float64).astype(np.float32)
    return torch.from_numpy(arr)


class ArrayPairDataset:
    """In-memory stand-in for PairDataset: a list of (degraded, clean) arrays."""

    def __init__(self, pairs):
        self.pairs = pairs

    def __len__(self):
        return len(self.pairs)

    def pair(self, index):
        return self.pairs[index]


def make_fake_datasets(rng, n=4, size=32):
    """Per-factor in-memory datasets of lightly noised clean images."""
    datasets = {}
    for factor in Factor:
        pairs = []
        for _ in range(n):
            clean = rng.random((size, size, 3)).astype(np.float32)
            degraded = np.clip(clean + rng.normal(0, 0.08, clean.shape), 0, 1)
            pairs.append((degraded.astype(np.float32), clean))
        datasets[factor] = ArrayPairDataset(pairs)
    return datasets


def toy_clean_image(rng, size=64) -> np.ndarray:
    """Smooth structured image: gradients, blobs, and light texture."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    img = np.zeros((size, size, 3))
    for c in range(3):
        img[..., c] = 0.5 + 0.3 * np.sin(
            2 * np.pi * (rng.uniform(0.5, 1.5) * xx
                         + rng.uniform(0.5, 1.5) * yy + rng.random()))
    for _ in range(4):
        cx, cy, r = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.08, 0.25)
        mask = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r ** 2)))
        img += mask[..., None] * rng.uniform(-0.35, 0.35, 3)
    img += gaussian_filter(rng.normal(0, 0.15, (size, size)), 1.5)[..., None]
    return np.clip(img, 0.02, 0.98)


# Mild (but in-distribution) degradation settings used for the toy runs.
TOY_PARAMS = {
    Factor.BLUR: BlurParams(10, 1.5, 20.0),
    Factor.RAIN: RainParams(0.55, 10, 90),
    Factor.JPEG: JpegParams(50),
    Factor.HAZE: HazeParams(0.9, 0.08),
}
TOY_HAZE_DISTANCE = 6.0


def build_toy_dataset(root, n_images=8, size=64, seed=1234):
    """Write ``n_images`` clean/degraded pairs per factor plus manifests.

    Returns {factor: per-factor manifest path}; a combined manifest.jsonl
    with all records is written as well.
    """
    root = Path(root)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    (root / "degraded").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    depth = vertical_gradient_depth(size, size)
    records = {f: [] for f in Factor}
    for i in range(n_images):
        img = toy_clean_image(rng, size)
        save_image(root / f"clean/{i}.png", img)
        degraded = {
            Factor.BLUR: synth_blur(img, TOY_PARAMS[Factor.BLUR]),
            Factor.RAIN: synth_rain(img, TOY_PARAMS[Factor.RAIN],
                                    np.random.default_rng([seed, i])),
            Factor.JPEG: synth_jpeg(img, TOY_PARAMS[Factor.JPEG]),
            Factor.HAZE: synth_haze(img, depth, TOY_PARAMS[Factor.HAZE],
                                    distance_scale=TOY_HAZE_DISTANCE),
        }
        for factor, out in degraded.items():
            rel = f"degraded/{i}_{factor.value}.png"
            save_image(root / rel, out)
            records[factor].append({
                "clean": f"clean/{i}.png", "degraded": rel,
                "factors": [factor.value], "params": {}, "seed": [seed, i],
            })
    manifests = {}
    everything = []
    for factor in Factor:
        path = root / f"manifest_{factor.value}.jsonl"
        write_manifest(path, records[factor])
        manifests[factor] = path
        everything.extend(records[factor])
    write_manifest(root / "manifest.jsonl", everything)
    return manifests


def prepare_fd_instance(module: nn.Module, rng) -> nn.Module:
    """Re-draw parameters so every rectifier sits far from its kink.

    Finite differencing with h=1e-3 is only a valid derivative estimate
    where the function is smooth in the probed neighbourhood; |t|^3,
    sigmoid and tanh are fine everywhere, but ReLU pre-activations must
    not sit within the probe window of zero. Shrinking weights and giving
    each unit a large bias of random sign keeps every pre-activation away
    from the kink while still exercising both ReLU regions.
    """
    module = module.double()
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, (nn.Conv2d, nn.Linear)):
                sub.weight.mul_(0.5)
                if sub.bias is not None:
                    magnitude = torch.from_numpy(rng.uniform(0.7, 0.9, sub.bias.shape))
                    sign = torch.from_numpy(
                        rng.choice([-1.0, 1.0], sub.bias.shape))
                    sub.bias.copy_(magnitude * sign)
    return module


def min_kink_margin(module: nn.Module, runner) -> float:
    """Smallest |pre-activation| feeding a ReLU during one forward pass."""
    margins = []
    hooks = []

    def record(_mod, _inp, out):
        margins.append(float(out.detach().abs().min()))

    for name, sub in module.named_modules():
        if name.endswith("fc1") or name.endswith("conv1"):
            hooks.append(sub.register_forward_hook(record))
    try:
        runner()
    finally:
        for h in hooks:
            h.remove()
    return min(margins) if margins else float("inf")


def fd_gradient_check(fn, inputs, rng, h=1e-3, rtol=1e-3, atol=2e-5,
                      max_coords=128):
    """Compare autograd gradients of a scalar ``fn(*inputs)`` to central
    finite differences on a random sample of coordinates.

    Inputs must be float64 leaf tensors with requires_grad set.
    """
    out = fn(*inputs)
    grads = torch.autograd.grad(out, inputs)
    worst = 0.0
    with torch.no_grad():
        for x, grad in zip(inputs, grads):
            flat = x.reshape(-1)
            gflat = grad.reshape(-1)
            n = flat.numel()
            if n <= max_coords:
                coords = np.arange(n)
            else:
                coords = rng.choice(n, size=max_coords, replace=False)
            for i in coords:
                i = int(i)
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = float(fn(*inputs))
                flat[i] = orig - h
                f_minus = float(fn(*inputs))
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                auto = float(gflat[i])
                err = abs(fd - auto)
                bound = atol + rtol * max(abs(fd), abs(auto))
                assert err <= bound, (
                    f"gradient mismatch at coord {i}: fd={fd:.8g} autograd={auto:.8g} "
                    f"err={err:.3g} bound={bound:.3g}")
                scale = max(abs(fd), abs(auto), 1e-8)
                worst = max(worst, err / scale)
    return worst
