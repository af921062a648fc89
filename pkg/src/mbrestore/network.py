"""Network assembly, restoration entry points, accounting and checkpoints.

Two ways to run the same parameters:

* ``mbn_restore`` removes one *specified* factor through its branch pair.
* ``rmbn_restore`` chains ``mbn_restore`` over all factors in a fixed
  order, feeding each stage's output to the next stage's input branch, so
  no factor needs to be specified.

Images move through the public API as float tensors shaped (B, 3, H, W)
with values in [0, 1]; internally they are mapped affinely to [-1, 1].
Heads predict a bounded residual which is added back onto the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import SEResBlock  # noqa: F401  (re-exported for model surgery)
from .blocks import DualResBlock, Stem, STEM_KERNELS, TAP_KERNELS
from .branches import (MinimalHead, MinimalInputBranch, MultiScaleHead, RainHead,
                       RainInputBranch, ScaleRecurrentInputBranch)
from .errors import ConfigurationError, DataError
from .factors import DEFAULT_RESTORE_ORDER, TAP_DEPTH, Factor

CHECKPOINT_VERSION = 1

_SHARED_INPUT_KEY = "shared"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture options.

    ``arch`` selects between the factor-specific branch designs
    ("improved", the default) and the ablation variant with a single
    shared input branch and identical heads ("minimal"). ``base_channels``
    must be a multiple of 12; 96 is the reference width.
    """

    arch: str = "improved"
    base_channels: int = 96
    reduction: int = 16
    beta: float = 3.0
    use_gap: bool = True
    use_tv: bool = True
    fusion: bool = True
    rain_stages: int = 1
    stem_kernels: tuple = STEM_KERNELS
    tap_kernels: tuple = TAP_KERNELS

    def __post_init__(self):
        if self.arch not in ("improved", "minimal"):
            raise ConfigurationError(f"unknown architecture {self.arch!r}")
        if self.base_channels % 12 != 0 or self.base_channels <= 0:
            raise ConfigurationError("base_channels must be a positive multiple of 12")
        if self.rain_stages < 1:
            raise ConfigurationError("rain_stages must be >= 1")
        object.__setattr__(self, "stem_kernels",
                           tuple(tuple(k) for k in self.stem_kernels))
        object.__setattr__(self, "tap_kernels",
                           tuple(tuple(k) for k in self.tap_kernels))


class MultiBranchNet(nn.Module):
    """Shared-stem restoration network with per-factor branch pairs.

    Heads tap the post-stem refinement chain at fixed depths: rain on the
    stem output directly, blur after one refinement block, JPEG after two,
    haze after three. The "minimal" architecture drops the refinement
    chain and shares one input branch across all factors.
    """

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        attn = dict(reduction=cfg.reduction, beta=cfg.beta,
                    use_gap=cfg.use_gap, use_tv=cfg.use_tv)
        base = cfg.base_channels
        self.stem = Stem(base, cfg.stem_kernels, fusion=cfg.fusion, **attn)
        if cfg.arch == "improved":
            self.inputs = nn.ModuleDict({
                Factor.RAIN.value: RainInputBranch(base),
                Factor.BLUR.value: ScaleRecurrentInputBranch(base),
                Factor.JPEG.value: ScaleRecurrentInputBranch(base),
                Factor.HAZE.value: MinimalInputBranch(base),
            })
            self.taps = nn.ModuleList([
                DualResBlock(base, ku, kd, fusion=cfg.fusion, **attn)
                for ku, kd in cfg.tap_kernels
            ])
            self.heads = nn.ModuleDict({
                Factor.RAIN.value: RainHead(base),
                Factor.BLUR.value: MultiScaleHead(base),
                Factor.JPEG.value: MultiScaleHead(base),
                Factor.HAZE.value: MinimalHead(base),
            })
        else:
            self.inputs = nn.ModuleDict({_SHARED_INPUT_KEY: MinimalInputBranch(base)})
            self.taps = nn.ModuleList()
            self.heads = nn.ModuleDict({f.value: MinimalHead(base) for f in Factor})

    # -- structure ---------------------------------------------------------

    def input_branch(self, factor: Factor) -> nn.Module:
        if self.config.arch == "minimal":
            return self.inputs[_SHARED_INPUT_KEY]
        return self.inputs[Factor(factor).value]

    def head(self, factor: Factor) -> nn.Module:
        return self.heads[Factor(factor).value]

    def tap_depth(self, factor: Factor) -> int:
        if self.config.arch == "minimal":
            return 0
        return TAP_DEPTH[Factor(factor)]

    def input_parameters(self):
        """Parameters of every input branch (the set frozen by fine-tuning)."""
        for branch in self.inputs.values():
            yield from branch.parameters()

    # -- execution ---------------------------------------------------------

    def run_trunk(self, features: torch.Tensor, factor: Factor) -> torch.Tensor:
        """Stem plus the factor's share of the refinement chain."""
        x = features
        u = F.interpolate(features, scale_factor=2, mode="nearest")
        x, u = self.stem(x, u)
        for block in self.taps[: self.tap_depth(factor)]:
            x, u = block(x, u)
        return x

    def single_pass(self, img: torch.Tensor, factor: Factor, scale_index: int = 0,
                    prev: torch.Tensor | None = None, lstm_state=None):
        """One branch -> stem -> head pass on a [0, 1] image.

        Returns the restored [0, 1] image and the updated ConvLSTM state
        (None for factors other than rain).
        """
        factor = Factor(factor)
        net_in = img * 2 - 1
        minimal = self.config.arch == "minimal"
        if minimal:
            feat = self.input_branch(factor)(net_in)
        elif factor is Factor.RAIN:
            feat, lstm_state = self.inputs[factor.value](net_in, lstm_state)
        elif factor in (Factor.BLUR, Factor.JPEG):
            prev_in = None if prev is None else prev * 2 - 1
            feat = self.inputs[factor.value](net_in, scale_index, prev_in)
        else:
            feat = self.inputs[factor.value](net_in)
        x = self.run_trunk(feat, factor)
        head = self.head(factor)
        if isinstance(head, MultiScaleHead):
            residual = head(x, scale_index)
        else:
            residual = head(x)
        out = torch.clamp(img + 0.5 * residual, 0.0, 1.0)
        return out, (lstm_state if factor is Factor.RAIN else None)


@dataclass
class RestoreTrace:
    """Per-stage intermediates of one recurrent restoration."""

    order: tuple
    stages: list

    @property
    def final(self) -> torch.Tensor:
        return self.stages[-1]

    def stage_for(self, factor: Factor) -> torch.Tensor:
        return self.stages[self.order.index(Factor(factor))]


def _pad_multiple(model: MultiBranchNet, factor: Factor) -> int:
    # The scale-recurrent branches pixel-unshuffle twice at quarter scale,
    # so those factors need the full-resolution input divisible by 16.
    if model.config.arch == "improved" and factor in (Factor.BLUR, Factor.JPEG):
        return 16
    return 4


def _pad_to(img: torch.Tensor, mult: int) -> torch.Tensor:
    h, w = img.shape[-2:]
    ph = (mult - h % mult) % mult
    pw = (mult - w % mult) % mult
    if ph or pw:
        img = F.pad(img, (0, pw, 0, ph), mode="reflect")
    return img


def _validate_image(img: torch.Tensor) -> None:
    if img.ndim != 4 or img.shape[1] != 3:
        raise ConfigurationError(
            f"expected an RGB batch shaped (B, 3, H, W), got {tuple(img.shape)}")
    if img.shape[-2] < 16 or img.shape[-1] < 16:
        raise ConfigurationError("images must be at least 16x16")


def mbn_restore(model: MultiBranchNet, img: torch.Tensor, factor: Factor) -> torch.Tensor:
    """Remove one specified degradation factor from a [0, 1] image batch.

    The input is reflection-padded to the working multiple, cropped back
    on output; output shape equals input shape. Blur and JPEG run the
    three-scale internal recurrence (1/4, 1/2, full resolution), feeding
    each scale's output into the next scale's input branch.
    """
    factor = Factor(factor)
    _validate_image(img)
    h, w = img.shape[-2:]
    padded = _pad_to(img, _pad_multiple(model, factor))
    cfg = model.config
    if cfg.arch == "improved" and factor in (Factor.BLUR, Factor.JPEG):
        ph, pw = padded.shape[-2:]
        out = None
        for s in range(3):
            size = (ph // (1 << (2 - s)), pw // (1 << (2 - s)))
            if s == 2:
                scale_img = padded
            else:
                scale_img = F.interpolate(padded, size=size, mode="bilinear",
                                          align_corners=False, antialias=True)
            prev = None
            if out is not None:
                prev = F.interpolate(out, size=size, mode="bilinear", align_corners=False)
            out, _ = model.single_pass(scale_img, factor, scale_index=s, prev=prev)
        restored = out
    elif cfg.arch == "improved" and factor is Factor.RAIN:
        current = padded
        state = None
        for _ in range(cfg.rain_stages):
            current, state = model.single_pass(current, factor, lstm_state=state)
        restored = current
    else:
        restored, _ = model.single_pass(padded, factor)
    return restored[..., :h, :w]


def rmbn_restore(model: MultiBranchNet, img: torch.Tensor,
                 order=DEFAULT_RESTORE_ORDER) -> RestoreTrace:
    """Restore without specifying the factor: chain all branch pairs.

    Applies ``mbn_restore`` once per factor in ``order``, feeding each
    stage's output into the next stage. Returns the full trace; its last
    stage is the final image.
    """
    order = tuple(Factor(f) for f in order)
    if len(set(order)) != len(order):
        raise ConfigurationError("restoration order must not repeat a factor")
    stages = []
    current = img
    for factor in order:
        current = mbn_restore(model, current, factor)
        stages.append(current)
    return RestoreTrace(order=order, stages=stages)


def zero_residual_heads(model: MultiBranchNet) -> MultiBranchNet:
    """Zero every head's output conv so each branch pair is the identity."""
    for head in model.heads.values():
        nn.init.zeros_(head.conv_out.weight)
        nn.init.zeros_(head.conv_out.bias)
    return model


# -- parameter accounting ----------------------------------------------------


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


@dataclass
class ParamReport:
    """Per-component parameter counts grouped into network sections."""

    rows: list = field(default_factory=list)  # (section, name, count)

    def section_total(self, section: str) -> int:
        return sum(n for s, _, n in self.rows if s == section)

    @property
    def sections(self):
        seen = []
        for s, _, _ in self.rows:
            if s not in seen:
                seen.append(s)
        return seen

    @property
    def total(self) -> int:
        return sum(n for _, _, n in self.rows)

    def as_records(self):
        recs = [{"section": s, "name": n, "count": c} for s, n, c in self.rows]
        for s in self.sections:
            recs.append({"section": s, "name": "total", "count": self.section_total(s)})
        recs.append({"section": "all", "name": "total", "count": self.total})
        return recs

    def __str__(self) -> str:
        lines = [f"{'section':<8} {'component':<12} {'parameters':>12}"]
        for s, n, c in self.rows:
            lines.append(f"{s:<8} {n:<12} {c:>12,}")
        for s in self.sections:
            lines.append(f"{s:<8} {'total':<12} {self.section_total(s):>12,}")
        lines.append(f"{'all':<8} {'total':<12} {self.total:>12,}")
        return "\n".join(lines)


def param_report(model: MultiBranchNet) -> ParamReport:
    """Count parameters per input branch, stem block, refinement block, head."""
    report = ParamReport()
    for name, branch in model.inputs.items():
        report.rows.append(("input", name, count_parameters(branch)))
    for i, block in enumerate(model.stem.blocks, start=1):
        report.rows.append(("stem", f"block{i}", count_parameters(block)))
    for i, block in enumerate(model.taps, start=len(model.stem.blocks) + 1):
        report.rows.append(("tap", f"block{i}", count_parameters(block)))
    for name, head in model.heads.items():
        report.rows.append(("output", name, count_parameters(head)))
    return report


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path, model: MultiBranchNet, iteration: int = 0,
                    run_config=None, optimizer=None) -> None:
    """Write a versioned checkpoint: flat name->tensor map plus metadata.

    Parameter names follow the module tree (e.g. ``stem.blocks.0.res.conv1.weight``)
    and are stable across save/load.
    """
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "state": model.state_dict(),
        "iteration": int(iteration),
        "run_config": dict(run_config) if run_config else None,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}")
    except Exception as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise DataError(f"{path} is not a checkpoint file")
    if payload["version"] > CHECKPOINT_VERSION:
        raise DataError(
            f"checkpoint version {payload['version']} is newer than supported "
            f"version {CHECKPOINT_VERSION}")
    return payload


def model_from_checkpoint(payload: dict) -> MultiBranchNet:
    config = ModelConfig(**payload["model_config"])
    model = MultiBranchNet(config)
    model.load_state_dict(payload["state"])
    return model
