"""Synthetic degradation generators and the dataset builder.

Each generator maps a [0, 1] RGB image to a [0, 1] RGB image and is a
deterministic function of (image, parameters, seed). Combined degradation
applies the selected factors in the fixed physical order haze -> rain ->
blur -> JPEG.
"""

from __future__ import annotations

import io
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter
from scipy.signal import fftconvolve

from .data import list_images, load_depth, load_image, save_image, write_manifest
from .errors import ConfigurationError, DataError
from .factors import SYNTHESIS_ORDER, Factor

logger = logging.getLogger(__name__)

BLUR_RADIUS_SIGMA = ((10, 1.5), (10, 2.5), (12, 3.0), (12, 3.5), (13, 8.0), (15, 12.0))
BLUR_ANGLE_RANGE = (-45.0, 45.0)
RAIN_NOISE_LEVELS = (0.55, 0.65, 0.7, 0.8)
RAIN_BLUR_LENGTHS = (10, 20, 35, 50)
RAIN_ANGLES = (110, 105, 100, 90, 85, 80, 70)
JPEG_QUALITY_RANGE = (15, 50)
HAZE_V1 = (1.0, 0.95, 0.9, 0.8, 0.85)
HAZE_V2 = (0.2, 0.16, 0.12, 0.1, 0.08)

# Fixed smoothing applied to the rain streak kernel.
RAIN_KERNEL_SIGMA = 1.0


@dataclass(frozen=True)
class BlurParams:
    radius: int
    sigma: float
    angle: float

    def __post_init__(self):
        if (self.radius, float(self.sigma)) not in {(r, float(s)) for r, s in BLUR_RADIUS_SIGMA}:
            raise ConfigurationError(
                f"(radius, sigma) = ({self.radius}, {self.sigma}) is not an allowed pair")
        lo, hi = BLUR_ANGLE_RANGE
        if not lo <= self.angle <= hi:
            raise ConfigurationError(f"blur angle must be in [{lo}, {hi}], got {self.angle}")


@dataclass(frozen=True)
class RainParams:
    noise_level: float
    blur_length: int
    angle: float

    def __post_init__(self):
        if self.noise_level not in RAIN_NOISE_LEVELS:
            raise ConfigurationError(f"noise level {self.noise_level} not allowed")
        if self.blur_length not in RAIN_BLUR_LENGTHS:
            raise ConfigurationError(f"blur length {self.blur_length} not allowed")
        if self.angle not in RAIN_ANGLES:
            raise ConfigurationError(f"rain angle {self.angle} not allowed")


@dataclass(frozen=True)
class JpegParams:
    quality: int

    def __post_init__(self):
        lo, hi = JPEG_QUALITY_RANGE
        if not (isinstance(self.quality, (int, np.integer)) and lo <= self.quality <= hi):
            raise ConfigurationError(f"JPEG quality must be an int in [{lo}, {hi}]")


@dataclass(frozen=True)
class HazeParams:
    v1: float  # atmospheric light
    v2: float  # scattering coefficient

    def __post_init__(self):
        if self.v1 not in HAZE_V1:
            raise ConfigurationError(f"atmospheric light {self.v1} not allowed")
        if self.v2 not in HAZE_V2:
            raise ConfigurationError(f"scattering coefficient {self.v2} not allowed")


def line_kernel(length: int, angle_deg: float, sigma: float) -> np.ndarray:
    """Normalized motion kernel: anti-aliased line smoothed by a Gaussian.

    ``length`` sample points along the direction ``angle_deg`` (degrees
    from the horizontal axis, positive rotating the far end upward) are
    splatted bilinearly onto the grid and blurred with an isotropic
    Gaussian; the kernel sums to one. Bilinear splatting keeps the drawn
    direction faithful even for short lines, where nearest-cell
    rasterization quantizes the angle by several degrees.
    """
    if length < 1:
        raise ConfigurationError("kernel length must be >= 1")
    theta = np.deg2rad(angle_deg)
    half = (length - 1) / 2.0
    margin = int(np.ceil(4.0 * sigma)) + 1
    size = (length if length % 2 == 1 else length + 1) + 2 * margin
    center = size // 2
    t = np.arange(length, dtype=np.float64) - half
    rows = center - t * np.sin(theta)
    cols = center + t * np.cos(theta)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr = rows - r0
    fc = cols - c0
    kernel = np.zeros((size, size), dtype=np.float64)
    np.add.at(kernel, (r0, c0), (1 - fr) * (1 - fc))
    np.add.at(kernel, (r0 + 1, c0), fr * (1 - fc))
    np.add.at(kernel, (r0, c0 + 1), (1 - fr) * fc)
    np.add.at(kernel, (r0 + 1, c0 + 1), fr * fc)
    if sigma > 0:
        kernel = gaussian_filter(kernel, sigma, mode="constant")
    return kernel / kernel.sum()


def _convolve_reflect(channel: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D convolution with reflected boundaries (odd kernels only)."""
    kh, kw = kernel.shape
    padded = np.pad(channel, ((kh // 2, kh // 2), (kw // 2, kw // 2)), mode="reflect")
    return fftconvolve(padded, kernel, mode="valid")


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ConfigurationError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


def synth_blur(img: np.ndarray, params: BlurParams) -> np.ndarray:
    """Motion-blur an image with a smoothed line kernel."""
    img = _check_image(img)
    kernel = line_kernel(2 * params.radius + 1, params.angle, params.sigma)
    out = np.stack([_convolve_reflect(img[..., c], kernel) for c in range(3)], axis=-1)
    return np.clip(out, 0.0, 1.0)


def rain_streak_layer(shape, params: RainParams, rng) -> np.ndarray:
    """Streak layer: mean-thresholded Gaussian noise, motion-blurred."""
    noise = rng.normal(0.0, params.noise_level, size=shape)
    seeds = np.clip(noise - noise.mean(), 0.0, None)
    kernel = line_kernel(params.blur_length, params.angle, RAIN_KERNEL_SIGMA)
    return _convolve_reflect(seeds, kernel)


def synth_rain(img: np.ndarray, params: RainParams, rng) -> np.ndarray:
    """Composite bright rain streaks additively onto an image."""
    img = _check_image(img)
    layer = rain_streak_layer(img.shape[:2], params, rng)
    return np.clip(img + layer[..., None], 0.0, 1.0)


def _encode_jpeg(img: np.ndarray, quality: int) -> bytes:
    data = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data).save(buf, format="JPEG", quality=int(quality))
    return buf.getvalue()


def _decode_jpeg(blob: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(blob)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def synth_jpeg(img: np.ndarray, params: JpegParams) -> np.ndarray:
    """Round-trip an image through baseline JPEG at the given quality."""
    img = _check_image(img)
    return _decode_jpeg(_encode_jpeg(img, params.quality))


def synth_haze(img: np.ndarray, depth: np.ndarray, params: HazeParams,
               distance_scale: float = 10.0) -> np.ndarray:
    """Apply the scattering model out = img * t + v1 * (1 - t).

    ``depth`` is an (H, W) map in [0, 1]; transmission is
    t = exp(-v2 * depth * distance_scale).
    """
    img = _check_image(img)
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != img.shape[:2]:
        raise ConfigurationError(
            f"depth shape {depth.shape} does not match image {img.shape[:2]}")
    t = np.exp(-params.v2 * depth * distance_scale)[..., None]
    return np.clip(img * t + params.v1 * (1.0 - t), 0.0, 1.0)


def vertical_gradient_depth(height: int, width: int) -> np.ndarray:
    """Proxy depth map: 1 (far) at the top row falling linearly to 0."""
    return np.repeat(np.linspace(1.0, 0.0, height)[:, None], width, axis=1)


def sample_blur_params(rng) -> BlurParams:
    radius, sigma = BLUR_RADIUS_SIGMA[int(rng.integers(len(BLUR_RADIUS_SIGMA)))]
    return BlurParams(radius, sigma, float(rng.uniform(*BLUR_ANGLE_RANGE)))


def sample_rain_params(rng) -> RainParams:
    return RainParams(
        RAIN_NOISE_LEVELS[int(rng.integers(len(RAIN_NOISE_LEVELS)))],
        RAIN_BLUR_LENGTHS[int(rng.integers(len(RAIN_BLUR_LENGTHS)))],
        RAIN_ANGLES[int(rng.integers(len(RAIN_ANGLES)))],
    )


def sample_jpeg_params(rng) -> JpegParams:
    lo, hi = JPEG_QUALITY_RANGE
    return JpegParams(int(rng.integers(lo, hi + 1)))


def sample_haze_params(rng) -> HazeParams:
    return HazeParams(HAZE_V1[int(rng.integers(len(HAZE_V1)))],
                      HAZE_V2[int(rng.integers(len(HAZE_V2)))])


_SAMPLERS = {
    Factor.BLUR: sample_blur_params,
    Factor.RAIN: sample_rain_params,
    Factor.JPEG: sample_jpeg_params,
    Factor.HAZE: sample_haze_params,
}


def sample_params(factor: Factor, rng):
    return _SAMPLERS[Factor(factor)](rng)


def _apply_factors(img: np.ndarray, depth, factors, rng,
                   distance_scale: float = 10.0):
    """Apply the given factors in canonical order with sampled parameters.

    Returns (image, record, jpeg_bytes) where jpeg_bytes carries the exact
    encoded stream when JPEG was the final applied factor, else None.
    """
    wanted = {Factor(f) for f in factors}
    if not wanted:
        raise ConfigurationError("factor subset must be non-empty")
    applied = [f for f in SYNTHESIS_ORDER if f in wanted]
    record = {"factors": [f.value for f in applied], "params": {}}
    jpeg_bytes = None
    out = _check_image(img)
    for factor in applied:
        params = sample_params(factor, rng)
        record["params"][factor.value] = asdict(params)
        if factor is Factor.HAZE:
            if depth is None:
                depth = vertical_gradient_depth(*out.shape[:2])
            out = synth_haze(out, depth, params, distance_scale)
        elif factor is Factor.RAIN:
            out = synth_rain(out, params, rng)
        elif factor is Factor.BLUR:
            out = synth_blur(out, params)
        else:
            jpeg_bytes = _encode_jpeg(out, params.quality)
            out = _decode_jpeg(jpeg_bytes)
    return out, record, jpeg_bytes


def synth_combined(img: np.ndarray, depth, factors, rng,
                   distance_scale: float = 10.0):
    """Apply a factor subset in the fixed order haze -> rain -> blur -> JPEG.

    Returns the degraded image and a record listing the applied factors
    (in that canonical order) and every sampled parameter.
    """
    out, record, _ = _apply_factors(img, depth, factors, rng, distance_scale)
    return out, record


def _choose_subset(rng):
    """Uniform combination count X in {1..4}, then a uniform subset of size X."""
    x = int(rng.integers(1, 5))
    picks = rng.choice(len(SYNTHESIS_ORDER), size=x, replace=False)
    return [SYNTHESIS_ORDER[i] for i in sorted(picks)]


def build_dataset(src_dir, out_dir, mode: str = "pure", seed: int = 0,
                  depth_dir=None, distance_scale: float = 10.0):
    """Degrade every image under ``src_dir`` and write a manifest.

    ``pure`` mode emits one degraded image per factor per clean image;
    ``combined`` mode emits one image per clean image carrying a random
    combination of factors. Unreadable sources are skipped with a warning.
    Per-image RNG streams are derived from (seed, image index), so results
    do not depend on worker scheduling. Returns the manifest path.
    """
    if mode not in ("pure", "combined"):
        raise ConfigurationError(f"mode must be 'pure' or 'combined', got {mode!r}")
    sources = list_images(src_dir)
    if not sources:
        raise DataError(f"no images found under {src_dir}")
    out_dir = Path(out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "degraded").mkdir(parents=True, exist_ok=True)
    depth_dir = Path(depth_dir) if depth_dir is not None else None
    records = []
    for index, src in enumerate(sources):
        try:
            img = load_image(src)
        except DataError as exc:
            logger.warning("skipping %s: %s", src, exc)
            continue
        depth = None
        if depth_dir is not None:
            candidate = depth_dir / (src.stem + ".png")
            if candidate.is_file():
                depth = load_depth(candidate)
        clean_rel = f"clean/{src.stem}.png"
        save_image(out_dir / clean_rel, img)
        if mode == "pure":
            jobs = [(k, [factor]) for k, factor in enumerate(SYNTHESIS_ORDER)]
        else:
            jobs = [(0, _choose_subset(np.random.default_rng([seed, index])))]
        for k, factors in jobs:
            rng = np.random.default_rng([seed, index, k])
            degraded, record, jpeg_bytes = _apply_factors(
                img, depth, factors, rng, distance_scale)
            tag = "-".join(f.value for f in factors)
            if jpeg_bytes is not None:
                degraded_rel = f"degraded/{src.stem}_{tag}.jpg"
                (out_dir / degraded_rel).write_bytes(jpeg_bytes)
            else:
                degraded_rel = f"degraded/{src.stem}_{tag}.png"
                save_image(out_dir / degraded_rel, degraded)
            record.update({
                "clean": clean_rel,
                "degraded": degraded_rel,
                "seed": [seed, index, k],
            })
            records.append(record)
    if not records:
        raise DataError(f"no readable images under {src_dir}")
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)
    return manifest_path
