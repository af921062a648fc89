"""PSNR/SSIM benchmarking, order search, and the attention/fusion ablation."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch

from .data import load_image, read_manifest, to_tensor
from .errors import ConfigurationError, DataError
from .factors import Factor
from .losses import ssim
from .network import MultiBranchNet, ModelConfig, mbn_restore, rmbn_restore
from .training import CycleSpec, OptimSpec, train_joint

logger = logging.getLogger(__name__)

# Sentinel for the PSNR of bit-identical images; excluded from means.
PSNR_INF = math.inf


def _rgb_to_y(img: torch.Tensor) -> torch.Tensor:
    r, g, b = img[..., 0, :, :], img[..., 1, :, :], img[..., 2, :, :]
    return 0.299 * r + 0.587 * g + 0.114 * b


def psnr(a: torch.Tensor, b: torch.Tensor, y_channel: bool = False) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images.

    Identical inputs return the +inf sentinel. ``y_channel=True`` scores
    the luma channel only (the convention common for JPEG comparisons).
    """
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if y_channel:
        a, b = _rgb_to_y(a), _rgb_to_y(b)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


@dataclass
class GroupScore:
    psnr_mean: float
    ssim_mean: float
    count: int
    psnr_inf_count: int = 0


@dataclass
class EvalReport:
    """Aggregated restoration quality, grouped by factor set."""

    mode: str
    groups: dict = field(default_factory=dict)  # factor tuple -> GroupScore
    skipped: int = 0
    config_hash: str = ""
    per_sample: list = field(default_factory=list)

    def as_records(self):
        recs = []
        for factors, score in self.groups.items():
            recs.append({
                "factors": list(factors),
                "psnr": score.psnr_mean,
                "ssim": score.ssim_mean,
                "count": score.count,
                "psnr_inf_count": score.psnr_inf_count,
            })
        return recs

    def __str__(self) -> str:
        lines = [f"mode={self.mode} skipped={self.skipped} config={self.config_hash}",
                 f"{'factors':<24} {'psnr':>9} {'ssim':>8} {'n':>5}"]
        for factors, s in sorted(self.groups.items()):
            psnr_txt = "inf" if math.isinf(s.psnr_mean) else f"{s.psnr_mean:9.3f}"
            lines.append(f"{'+'.join(factors):<24} {psnr_txt:>9} {s.ssim_mean:8.4f} "
                         f"{s.count:>5}")
        return "\n".join(lines)


def evaluate(model: MultiBranchNet, manifest_path, mode: str = "mbn",
             factor: Factor | None = None, order=None, y_channel: bool = False,
             limit: int | None = None, config_hash: str = "") -> EvalReport:
    """Restore every manifest sample and aggregate PSNR/SSIM per factor set.

    ``mbn`` mode requires ``factor`` and routes every sample through that
    branch pair; ``rmbn`` mode runs the recurrent chain (optionally with a
    custom ``order``). Unreadable samples are skipped with a warning.
    """
    if mode not in ("mbn", "rmbn"):
        raise ConfigurationError(f"mode must be 'mbn' or 'rmbn', got {mode!r}")
    if mode == "mbn" and factor is None:
        raise ConfigurationError("mbn mode requires a factor")
    records = read_manifest(manifest_path)
    if limit is not None:
        records = records[:limit]
    if not records:
        raise DataError(f"manifest {manifest_path} is empty")
    root = Path(manifest_path).parent
    report = EvalReport(mode=mode, config_hash=config_hash)
    sums = {}
    model.eval()
    for rec in records:
        try:
            degraded = to_tensor(load_image(root / rec["degraded"])).unsqueeze(0)
            clean = to_tensor(load_image(root / rec["clean"])).unsqueeze(0)
            if degraded.shape != clean.shape:
                raise DataError(f"pair shapes differ for {rec['degraded']}")
        except DataError as exc:
            logger.warning("skipping sample: %s", exc)
            report.skipped += 1
            continue
        with torch.no_grad():
            if mode == "mbn":
                restored = mbn_restore(model, degraded, factor)
            else:
                kwargs = {} if order is None else {"order": order}
                restored = rmbn_restore(model, degraded, **kwargs).final
        sample_psnr = psnr(restored, clean, y_channel=y_channel)
        sample_ssim = float(ssim(restored, clean))
        key = tuple(rec.get("factors", []))
        entry = sums.setdefault(key, {"psnr": 0.0, "ssim": 0.0, "n": 0, "inf": 0})
        if math.isinf(sample_psnr):
            entry["inf"] += 1
        else:
            entry["psnr"] += sample_psnr
        entry["ssim"] += sample_ssim
        entry["n"] += 1
        report.per_sample.append({"factors": list(key), "psnr": sample_psnr,
                                  "ssim": sample_ssim})
    for key, entry in sums.items():
        finite = entry["n"] - entry["inf"]
        report.groups[key] = GroupScore(
            psnr_mean=(entry["psnr"] / finite) if finite else PSNR_INF,
            ssim_mean=entry["ssim"] / entry["n"],
            count=entry["n"],
            psnr_inf_count=entry["inf"],
        )
    return report


def write_report(report: EvalReport, path) -> None:
    """Emit the human-readable table and a machine-readable JSONL twin."""
    path = Path(path)
    path.write_text(str(report) + "\n", encoding="utf-8")
    with open(path.with_suffix(".jsonl"), "w", encoding="utf-8") as fh:
        for rec in report.as_records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class OrderScore:
    order: tuple
    psnr: float
    ssim: float


@dataclass
class OrderSearchResult:
    stage1: list = field(default_factory=list)
    stage2: list = field(default_factory=list)
    ranked: list = field(default_factory=list)

    @property
    def best(self):
        return self.ranked[0].order if self.ranked else None


def _score_order(model, order, manifests, limit=None) -> OrderScore:
    psnrs, ssims = [], []
    for factor in order:
        if factor not in manifests:
            continue
        report = evaluate(model, manifests[factor], mode="rmbn", order=order,
                          limit=limit)
        finite = [g.psnr_mean for g in report.groups.values()
                  if not math.isinf(g.psnr_mean)]
        psnrs.append(sum(finite) / len(finite) if finite else PSNR_INF)
        ssims.append(sum(g.ssim_mean for g in report.groups.values())
                     / len(report.groups))
    # Factors weigh equally regardless of per-set sample counts.
    return OrderScore(tuple(order), sum(psnrs) / len(psnrs), sum(ssims) / len(ssims))


def order_search(model: MultiBranchNet, val_manifests, strategy: str = "two_step",
                 limit: int | None = None) -> OrderSearchResult:
    """Rank recurrent factor orders by validation PSNR/SSIM.

    ``two_step``: test the 6 permutations of {blur, haze, rain}, then
    insert JPEG into each of the 4 positions of the winner. ``exhaustive``
    tests all 24 permutations.
    """
    if strategy not in ("two_step", "exhaustive"):
        raise ConfigurationError(f"unknown strategy {strategy!r}")
    val_manifests = {Factor(k): v for k, v in val_manifests.items()}
    result = OrderSearchResult()
    if strategy == "exhaustive":
        for perm in itertools.permutations(tuple(Factor)):
            result.stage2.append(_score_order(model, perm, val_manifests, limit))
        result.ranked = sorted(result.stage2, key=lambda s: (-s.psnr, -s.ssim))
        return result
    trio = (Factor.BLUR, Factor.HAZE, Factor.RAIN)
    for perm in itertools.permutations(trio):
        result.stage1.append(_score_order(model, perm, val_manifests, limit))
    best3 = max(result.stage1, key=lambda s: (s.psnr, s.ssim)).order
    for pos in range(len(best3) + 1):
        candidate = best3[:pos] + (Factor.JPEG,) + best3[pos:]
        result.stage2.append(_score_order(model, candidate, val_manifests, limit))
    result.ranked = sorted(result.stage2, key=lambda s: (-s.psnr, -s.ssim))
    return result


# The five attention/fusion configurations compared in the component
# ablation: all off, TV only, GAP only, fusion only, everything on (the
# full model, labeled MBN).
ABLATION_GRID = (
    {"use_tv": False, "use_gap": False, "fusion": False},
    {"use_tv": True, "use_gap": False, "fusion": False},
    {"use_tv": False, "use_gap": True, "fusion": False},
    {"use_tv": False, "use_gap": False, "fusion": True},
    {"use_tv": True, "use_gap": True, "fusion": True},
)


@dataclass
class AblationRow:
    label: str
    flags: dict
    parameters: int
    metrics: dict  # factor value -> (psnr, ssim)
    schedule: list = field(default_factory=list)  # logged factor sequence


def ablation_harness(datasets, eval_manifests, base_config: ModelConfig,
                     optim_spec: OptimSpec, cycle_spec: CycleSpec, iters: int,
                     seed: int = 0, config_grid=ABLATION_GRID,
                     limit: int | None = None) -> list:
    """Train and score each attention/fusion variant under one schedule.

    Every variant trains with the same seed, cycle spec and iteration
    count, so the logged cycle composition is identical across rows. The
    fully enabled variant is labeled ``MBN``.
    """
    rows = []
    for flags in config_grid:
        config = replace(base_config, **flags)
        model = MultiBranchNet(config)
        torch.manual_seed(seed)
        result = train_joint(model, datasets, optim_spec, cycle_spec, iters,
                             seed=seed, augment=False)
        metrics = {}
        for factor, manifest in eval_manifests.items():
            factor = Factor(factor)
            report = evaluate(model, manifest, mode="mbn", factor=factor, limit=limit)
            score = next(iter(report.groups.values()))
            metrics[factor.value] = (score.psnr_mean, score.ssim_mean)
        all_on = all(flags.get(k, False) for k in ("use_tv", "use_gap", "fusion"))
        rows.append(AblationRow(
            label="MBN" if all_on else "+".join(k for k, v in sorted(flags.items()) if v) or "baseline",
            flags=dict(flags),
            parameters=sum(p.numel() for p in model.parameters()),
            metrics=metrics,
            schedule=[rec["factor"] for rec in result.records],
        ))
    return rows
