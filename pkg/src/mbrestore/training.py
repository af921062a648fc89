"""Cycle-based joint training and recurrent fine-tuning.

Joint training iterates *cycles*: each cycle holds a fixed per-factor
minibatch composition (one haze, one rain, one JPEG, three blur by
default) packed in random order, each minibatch forwarded through its own
branch pair. Fine-tuning then trains the recurrent path with the input
branches frozen, weighting the known factor's intermediate output against
the final output.

The loss log is line-delimited JSON, one record per minibatch with
iteration (cycle index), factor, loss and learning rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import PairDataset, crop_pair, to_tensor
from .errors import ConfigurationError, DataError, TrainingDiverged
from .factors import DEFAULT_RESTORE_ORDER, Factor
from .losses import restoration_loss
from .network import MultiBranchNet, mbn_restore, rmbn_restore, save_checkpoint

DEFAULT_CYCLE_COUNTS = {Factor.HAZE: 1, Factor.RAIN: 1, Factor.JPEG: 1, Factor.BLUR: 3}


@dataclass
class CycleSpec:
    """Composition of one training cycle and its cropping policy."""

    counts: dict = field(default_factory=lambda: dict(DEFAULT_CYCLE_COUNTS))
    batch_size: int = 40
    crop_rain: int = 128
    crop_other: int = 256

    def crop(self, factor: Factor) -> int:
        return self.crop_rain if Factor(factor) is Factor.RAIN else self.crop_other

    def minibatches_per_cycle(self) -> int:
        return sum(self.counts.values())


@dataclass
class OptimSpec:
    """Adam settings and the plateau learning-rate policy."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    drop_factor: float = 0.1
    plateau_window: int = 500
    plateau_min_improve: float = 0.005
    max_drops: int = 2


@dataclass
class FinetuneSpec:
    """Loss weighting and freezing policy for the recurrent fine-tune."""

    lr: float = 1e-6
    intermediate_weight: float = 0.8
    final_weight: float = 0.2
    batch_size: int = 4
    freeze_input_branches: bool = True


@dataclass
class Minibatch:
    """One factor's crop batch inside a cycle."""

    factor: Factor
    degraded: torch.Tensor
    clean: torch.Tensor
    indices: list
    transform_ids: list = field(default_factory=list)


def build_cycle(datasets, spec: CycleSpec, rng) -> list:
    """Assemble one cycle: per-factor minibatch counts, shuffled order.

    ``datasets`` maps each factor in ``spec.counts`` to a PairDataset.
    Samples are drawn uniformly and cropped at the factor's crop size; the
    minibatch order is a uniform shuffle driven by ``rng``.
    """
    items = []
    for factor in Factor:  # fixed iteration order keeps rng draws reproducible
        count = spec.counts.get(factor, 0)
        if count == 0:
            continue
        if factor not in datasets:
            raise DataError(f"no dataset supplied for factor {factor}")
        dataset = datasets[factor]
        if len(dataset) == 0:
            raise DataError(f"dataset for factor {factor} is empty")
        for _ in range(count):
            indices = rng.integers(0, len(dataset), size=spec.batch_size)
            degraded, clean = [], []
            for idx in indices:
                d, c = dataset.pair(int(idx))
                d, c = crop_pair(d, c, spec.crop(factor), rng)
                degraded.append(to_tensor(d))
                clean.append(to_tensor(c))
            items.append(Minibatch(factor, torch.stack(degraded), torch.stack(clean),
                                   [int(i) for i in indices]))
    order = rng.permutation(len(items))
    return [items[i] for i in order]


_HAZE_OPS = ("hflip", "vflip", "rot")


def _apply_transform(img: torch.Tensor, tid: str) -> torch.Tensor:
    for op in tid.split("+"):
        if op == "none":
            continue
        if op == "hflip":
            img = torch.flip(img, dims=[-1])
        elif op == "vflip":
            img = torch.flip(img, dims=[-2])
        elif op.startswith("rot"):
            img = torch.rot90(img, k=int(op[3:]) // 90, dims=(-2, -1))
        else:
            raise ConfigurationError(f"unknown transform op {op!r}")
    return img


def sample_transform_id(factor: Factor, rng) -> str:
    """Draw an augmentation id: hflip for most factors, flips+rotations for haze."""
    ops = []
    if rng.random() < 0.5:
        ops.append("hflip")
    if Factor(factor) is Factor.HAZE:
        if rng.random() < 0.5:
            ops.append("vflip")
        k = int(rng.integers(0, 4))
        if k:
            ops.append(f"rot{90 * k}")
    return "+".join(ops) if ops else "none"


def augment_minibatch(batch: Minibatch, rng) -> Minibatch:
    """Apply the same per-pair geometric transform to degraded and clean."""
    degraded, clean, tids = [], [], []
    for i in range(batch.degraded.shape[0]):
        tid = sample_transform_id(batch.factor, rng)
        degraded.append(_apply_transform(batch.degraded[i], tid))
        clean.append(_apply_transform(batch.clean[i], tid))
        tids.append(tid)
    return Minibatch(batch.factor, torch.stack(degraded), torch.stack(clean),
                     batch.indices, tids)


class PlateauLRController:
    """Drops the learning rate when windowed mean loss stops improving.

    The loss is averaged over ``window`` consecutive updates; if a window
    fails to improve on the best previous window by ``min_improve``
    (fractionally), every optimizer learning rate is multiplied by
    ``factor``. At most ``max_drops`` drops are ever applied.
    """

    def __init__(self, optimizer, window: int = 500, min_improve: float = 0.005,
                 factor: float = 0.1, max_drops: int = 2):
        self.optimizer = optimizer
        self.window = max(1, int(window))
        self.min_improve = min_improve
        self.factor = factor
        self.max_drops = max_drops
        self.drops = 0
        self._buffer = []
        self._best = None

    def step(self, loss: float) -> bool:
        """Record one loss; returns True when a drop was applied."""
        self._buffer.append(float(loss))
        if len(self._buffer) < self.window:
            return False
        avg = sum(self._buffer) / len(self._buffer)
        self._buffer.clear()
        if self._best is None:
            self._best = avg
            return False
        if avg <= self._best * (1.0 - self.min_improve):
            self._best = avg
            return False
        self._best = min(self._best, avg)
        if self.drops >= self.max_drops:
            return False
        self.drops += 1
        for group in self.optimizer.param_groups:
            group["lr"] *= self.factor
        return True


@dataclass
class TrainResult:
    iterations: int
    records: list
    checkpoint_path: object = None


def _current_lr(optimizer) -> float:
    return optimizer.param_groups[0]["lr"]


def _check_finite(loss: torch.Tensor, iteration: int, factor: Factor) -> None:
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss {value} at iteration {iteration} (factor {factor})")


def _open_log(log_path):
    if log_path is None:
        return None
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    return open(log_path, "a", encoding="utf-8")


def _emit(records, fh, record: dict) -> None:
    records.append(record)
    if fh is not None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()


def make_optimizer(model: MultiBranchNet, spec: OptimSpec, lr=None):
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.Adam(params, lr=spec.lr if lr is None else lr,
                            betas=(spec.beta1, spec.beta2), eps=spec.eps)


def train_joint(model: MultiBranchNet, datasets, optim_spec: OptimSpec,
                cycle_spec: CycleSpec, iters: int, seed: int = 0,
                augment: bool = True, log_path=None, out_dir=None,
                checkpoint_every: int = 0, start_iteration: int = 0,
                optimizer=None, run_config=None) -> TrainResult:
    """First training step: jointly fit every forward branch pair.

    Each minibatch is forwarded through its factor's branch pair and
    scored with the restoration loss; one Adam step per minibatch. A
    non-finite loss aborts with TrainingDiverged.
    """
    rng = np.random.default_rng(seed)
    optimizer = optimizer or make_optimizer(model, optim_spec)
    plateau = PlateauLRController(optimizer, optim_spec.plateau_window,
                                  optim_spec.plateau_min_improve,
                                  optim_spec.drop_factor, optim_spec.max_drops)
    records = []
    fh = _open_log(log_path)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = None
    model.train()
    try:
        iteration = start_iteration
        for step in range(iters):
            iteration = start_iteration + step
            cycle = build_cycle(datasets, cycle_spec, rng)
            cycle_losses = []
            for batch in cycle:
                if augment:
                    batch = augment_minibatch(batch, rng)
                pred = mbn_restore(model, batch.degraded, batch.factor)
                loss = restoration_loss(pred, batch.clean)
                _check_finite(loss, iteration, batch.factor)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                cycle_losses.append(float(loss.detach()))
                _emit(records, fh, {
                    "iteration": iteration,
                    "factor": batch.factor.value,
                    "loss": cycle_losses[-1],
                    "lr": _current_lr(optimizer),
                    "transforms": batch.transform_ids,
                })
            plateau.step(sum(cycle_losses) / len(cycle_losses))
            if (out_dir is not None and checkpoint_every
                    and (step + 1) % checkpoint_every == 0):
                save_checkpoint(out_dir / f"ckpt_{iteration + 1:07d}.pt", model,
                                iteration + 1, run_config, optimizer)
        if out_dir is not None:
            checkpoint_path = out_dir / "ckpt_final.pt"
            save_checkpoint(checkpoint_path, model, iteration + 1 if iters else
                            start_iteration, run_config, optimizer)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(start_iteration + iters, records, checkpoint_path)


def finetune_recurrent(model: MultiBranchNet, datasets, finetune_spec: FinetuneSpec,
                       order=DEFAULT_RESTORE_ORDER, iters: int = 0,
                       cycle_spec: CycleSpec | None = None, seed: int = 0,
                       log_path=None, out_dir=None, start_iteration: int = 0,
                       run_config=None) -> TrainResult:
    """Second training step: fit the recurrent path.

    Per iteration one factor is visited (round-robin over the restoration
    order); its samples run through the whole recurrent chain and the loss
    is ``w_int * loss(intermediate at that factor) + w_fin * loss(final)``.
    Input-branch parameters are frozen (excluded from the optimizer and
    gradient-free) when the spec says so.
    """
    order = tuple(Factor(f) for f in order)
    cycle_spec = cycle_spec or CycleSpec()
    rng = np.random.default_rng(seed)
    if finetune_spec.freeze_input_branches:
        for p in model.input_parameters():
            p.requires_grad_(False)
    optimizer = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad], lr=finetune_spec.lr)
    records = []
    fh = _open_log(log_path)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = None
    model.train()
    try:
        iteration = start_iteration
        for step in range(iters):
            iteration = start_iteration + step
            factor = order[step % len(order)]
            if factor not in datasets:
                raise DataError(f"no dataset supplied for factor {factor}")
            dataset = datasets[factor]
            if len(dataset) == 0:
                raise DataError(f"dataset for factor {factor} is empty")
            indices = rng.integers(0, len(dataset), size=finetune_spec.batch_size)
            degraded, clean = [], []
            for idx in indices:
                d, c = dataset.pair(int(idx))
                d, c = crop_pair(d, c, cycle_spec.crop(factor), rng)
                degraded.append(to_tensor(d))
                clean.append(to_tensor(c))
            degraded = torch.stack(degraded)
            clean = torch.stack(clean)
            trace = rmbn_restore(model, degraded, order)
            loss_int = restoration_loss(trace.stage_for(factor), clean)
            loss_fin = restoration_loss(trace.final, clean)
            loss = (finetune_spec.intermediate_weight * loss_int
                    + finetune_spec.final_weight * loss_fin)
            _check_finite(loss, iteration, factor)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            _emit(records, fh, {
                "iteration": iteration,
                "factor": factor.value,
                "loss": float(loss.detach()),
                "loss_intermediate": float(loss_int.detach()),
                "loss_final": float(loss_fin.detach()),
                "lr": _current_lr(optimizer),
            })
        if out_dir is not None:
            checkpoint_path = out_dir / "ckpt_finetuned.pt"
            save_checkpoint(checkpoint_path, model, iteration + 1 if iters else
                            start_iteration, run_config, optimizer)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(start_iteration + iters, records, checkpoint_path)


def datasets_from_manifests(manifests) -> dict:
    """Build per-factor PairDatasets from {factor: manifest path}."""
    out = {}
    for factor, path in manifests.items():
        factor = Factor(factor)
        out[factor] = PairDataset(path, factors=[factor])
    return out
