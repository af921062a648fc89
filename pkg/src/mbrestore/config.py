"""Flat key-value run configuration with dotted namespaces.

Every knob has a default matching the reference training recipe; a config
file only lists overrides. Lines look like ``optim.lr = 1e-4``; ``#``
starts a comment. Unknown keys are rejected by name, and emission is
canonical so that emit -> parse round-trips to an identical RunConfig.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import UsageError
from .factors import DEFAULT_RESTORE_ORDER, Factor, order_to_text, parse_order
from .network import ModelConfig
from .training import CycleSpec, FinetuneSpec, OptimSpec


@dataclass
class RunConfig:
    """Everything a training or evaluation run needs besides data paths."""

    model: ModelConfig = field(default_factory=ModelConfig)
    cycle: CycleSpec = field(default_factory=CycleSpec)
    optim: OptimSpec = field(default_factory=OptimSpec)
    finetune: FinetuneSpec = field(default_factory=FinetuneSpec)
    order: tuple = DEFAULT_RESTORE_ORDER
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 0
    paths: dict = field(default_factory=dict)  # factor value -> manifest path


def _parse_bool(value: str) -> bool:
    if value.lower() in ("true", "1", "yes"):
        return True
    if value.lower() in ("false", "0", "no"):
        return False
    raise UsageError(f"expected a boolean, got {value!r}")


def _parse_kernels(value: str) -> tuple:
    pairs = []
    for chunk in value.split(","):
        chunk = chunk.strip()
        try:
            up, down = chunk.split("x")
            pairs.append((int(up), int(down)))
        except ValueError as exc:
            raise UsageError(f"bad kernel pair {chunk!r}; expected e.g. 5x3") from exc
    return tuple(pairs)


def _emit_kernels(pairs) -> str:
    return ",".join(f"{u}x{d}" for u, d in pairs)


def _emit_bool(value: bool) -> str:
    return "true" if value else "false"


def _fmt_float(value: float) -> str:
    return repr(float(value))


# key -> (parse, emit, get, set); get/set operate on a mutable builder dict.
def _schema():
    entries = {}

    def add(key, parse, emit, get, put):
        entries[key] = (parse, emit, get, put)

    add("model.arch", str, str,
        lambda c: c.model.arch, lambda b, v: b["model"].__setitem__("arch", v))
    for name in ("base_channels", "reduction", "rain_stages"):
        add(f"model.{name}", int, str,
            (lambda n: lambda c: getattr(c.model, n))(name),
            (lambda n: lambda b, v: b["model"].__setitem__(n, v))(name))
    add("model.beta", float, _fmt_float,
        lambda c: c.model.beta, lambda b, v: b["model"].__setitem__("beta", v))
    for name in ("use_gap", "use_tv", "fusion"):
        add(f"model.{name}", _parse_bool, _emit_bool,
            (lambda n: lambda c: getattr(c.model, n))(name),
            (lambda n: lambda b, v: b["model"].__setitem__(n, v))(name))
    for name in ("stem_kernels", "tap_kernels"):
        add(f"model.{name}", _parse_kernels, _emit_kernels,
            (lambda n: lambda c: getattr(c.model, n))(name),
            (lambda n: lambda b, v: b["model"].__setitem__(n, v))(name))
    for factor in Factor:
        add(f"cycle.{factor.value}", int, str,
            (lambda f: lambda c: c.cycle.counts.get(f, 0))(factor),
            (lambda f: lambda b, v: b["counts"].__setitem__(f, v))(factor))
    for name in ("batch_size", "crop_rain", "crop_other"):
        add(f"cycle.{name}", int, str,
            (lambda n: lambda c: getattr(c.cycle, n))(name),
            (lambda n: lambda b, v: b["cycle"].__setitem__(n, v))(name))
    for name in ("lr", "beta1", "beta2", "eps", "drop_factor", "plateau_min_improve"):
        add(f"optim.{name}", float, _fmt_float,
            (lambda n: lambda c: getattr(c.optim, n))(name),
            (lambda n: lambda b, v: b["optim"].__setitem__(n, v))(name))
    for name in ("plateau_window", "max_drops"):
        add(f"optim.{name}", int, str,
            (lambda n: lambda c: getattr(c.optim, n))(name),
            (lambda n: lambda b, v: b["optim"].__setitem__(n, v))(name))
    for name in ("lr", "intermediate_weight", "final_weight"):
        add(f"finetune.{name}", float, _fmt_float,
            (lambda n: lambda c: getattr(c.finetune, n))(name),
            (lambda n: lambda b, v: b["finetune"].__setitem__(n, v))(name))
    add("finetune.batch_size", int, str,
        lambda c: c.finetune.batch_size,
        lambda b, v: b["finetune"].__setitem__("batch_size", v))
    add("finetune.freeze_input_branches", _parse_bool, _emit_bool,
        lambda c: c.finetune.freeze_input_branches,
        lambda b, v: b["finetune"].__setitem__("freeze_input_branches", v))
    add("train.augment", _parse_bool, _emit_bool,
        lambda c: c.augment, lambda b, v: b.__setitem__("augment", v))
    add("train.checkpoint_every", int, str,
        lambda c: c.checkpoint_every, lambda b, v: b.__setitem__("checkpoint_every", v))
    add("order", lambda v: parse_order(v), order_to_text,
        lambda c: c.order, lambda b, v: b.__setitem__("order", v))
    add("seed", int, str, lambda c: c.seed, lambda b, v: b.__setitem__("seed", v))
    for factor in Factor:
        add(f"paths.{factor.value}", str, str,
            (lambda f: lambda c: c.paths.get(f.value, ""))(factor),
            (lambda f: lambda b, v: b["paths"].__setitem__(f.value, v))(factor))
    return entries


_SCHEMA = _schema()


def _build(builder: dict) -> RunConfig:
    return RunConfig(
        model=ModelConfig(**builder["model"]),
        cycle=CycleSpec(counts=builder["counts"], **builder["cycle"]),
        optim=OptimSpec(**builder["optim"]),
        finetune=FinetuneSpec(**builder["finetune"]),
        order=builder["order"],
        seed=builder["seed"],
        augment=builder["augment"],
        checkpoint_every=builder["checkpoint_every"],
        paths={k: v for k, v in builder["paths"].items() if v},
    )


def _fresh_builder() -> dict:
    defaults = RunConfig()
    return {
        "model": {},
        "counts": dict(defaults.cycle.counts),
        "cycle": {},
        "optim": {},
        "finetune": {},
        "order": defaults.order,
        "seed": defaults.seed,
        "augment": defaults.augment,
        "checkpoint_every": defaults.checkpoint_every,
        "paths": {},
    }


def config_from_flat(flat: dict) -> RunConfig:
    builder = _fresh_builder()
    for key, raw in flat.items():
        if key not in _SCHEMA:
            raise UsageError(f"unknown configuration key: {key}")
        parse, _, _, put = _SCHEMA[key]
        try:
            put(builder, parse(str(raw).strip()))
        except UsageError:
            raise
        except (ValueError, TypeError) as exc:
            raise UsageError(f"bad value for {key}: {raw!r} ({exc})") from exc
    return _build(builder)


def parse_config(text: str) -> RunConfig:
    flat = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in flat:
            raise UsageError(f"duplicate configuration key: {key}")
        flat[key] = value
    return config_from_flat(flat)


def load_config(path) -> RunConfig:
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def config_to_flat(config: RunConfig) -> dict:
    flat = {}
    for key, (_, emit, get, _) in _SCHEMA.items():
        value = get(config)
        if key.startswith("paths.") and not value:
            continue
        flat[key] = emit(value)
    return flat


def emit_config(config: RunConfig) -> str:
    lines = [f"{key} = {value}" for key, value in config_to_flat(config).items()]
    return "\n".join(lines) + "\n"


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(emit_config(config).encode("utf-8")).hexdigest()[:16]
