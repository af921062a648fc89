"""Image and manifest I/O plus the paired-sample dataset used for training.

A dataset manifest is line-delimited JSON, one record per sample:
``{"clean": ..., "degraded": ..., "factors": [...], "params": {...}, "seed": ...}``
with paths stored relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DataError
from .factors import Factor

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def load_image(path) -> np.ndarray:
    """Read an image as float32 RGB (H, W, 3) in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr


def save_image(path, img: np.ndarray) -> None:
    """Write a [0, 1] float image as 8-bit RGB."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    data = (arr * 255.0).round().astype(np.uint8)
    Image.fromarray(data).save(path)


def load_depth(path) -> np.ndarray:
    """Read a grayscale depth map as float32 (H, W) in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read depth map {path}: {exc}") from exc
    return arr


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, 3) float array -> (3, H, W) float tensor."""
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).float()


def from_tensor(img: torch.Tensor) -> np.ndarray:
    """(3, H, W) or (1, 3, H, W) tensor -> (H, W, 3) float array."""
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise DataError("expected a single image, got a batch")
        img = img[0]
    return img.detach().cpu().numpy().transpose(1, 2, 0)


def list_images(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in IMAGE_EXTENSIONS)


def write_manifest(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"bad manifest line {line_no} in {path}: {exc}") from exc
    return records


class PairDataset:
    """Degraded/clean image pairs backed by a manifest file.

    Args:
        manifest_path: path to the line-delimited manifest.
        factors: optional factor list; keeps only records whose factor set
            matches exactly (e.g. ``[Factor.RAIN]`` for the pure rain split).
    """

    def __init__(self, manifest_path, factors=None):
        self.manifest_path = Path(manifest_path)
        self.root = self.manifest_path.parent
        records = read_manifest(self.manifest_path)
        if factors is not None:
            wanted = sorted(Factor(f).value for f in factors)
            records = [r for r in records if sorted(r.get("factors", [])) == wanted]
        self.records = records

    def __len__(self) -> int:
        return len(self.records)

    def pair(self, index: int):
        """Load (degraded, clean) float arrays for one record."""
        rec = self.records[index]
        degraded = load_image(self.root / rec["degraded"])
        clean = load_image(self.root / rec["clean"])
        return degraded, clean


def crop_pair(degraded: np.ndarray, clean: np.ndarray, size: int, rng):
    """Take the same random ``size`` x ``size`` window from both images.

    Images smaller than the requested crop are used whole.
    """
    if degraded.shape != clean.shape:
        raise DataError(f"pair shapes differ: {degraded.shape} vs {clean.shape}")
    h, w = degraded.shape[:2]
    ch, cw = min(size, h), min(size, w)
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return (degraded[top:top + ch, left:left + cw],
            clean[top:top + ch, left:left + cw])
