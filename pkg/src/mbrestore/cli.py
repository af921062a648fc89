"""Command-line interface.

Subcommands: ``synth`` (dataset synthesis), ``train`` (joint training),
``finetune`` (recurrent fine-tuning), ``restore`` (run the network on
images), ``eval`` (PSNR/SSIM benchmarking) and ``params`` (parameter
accounting). Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from . import degrade
from .config import (RunConfig, config_from_flat, config_hash, config_to_flat,
                     load_config)
from .data import from_tensor, list_images, load_image, save_image, to_tensor
from .errors import DataError, TrainingDiverged, UsageError
from .evaluate import evaluate, write_report
from .factors import DEFAULT_RESTORE_ORDER, Factor, parse_order
from .network import (MultiBranchNet, load_checkpoint, model_from_checkpoint,
                      mbn_restore, param_report, rmbn_restore)
from .training import datasets_from_manifests, finetune_recurrent, train_joint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; route through UsageError for exit 1.
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mbrestore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a degraded dataset")
    p.add_argument("--src", required=True, help="directory of clean images")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--mode", choices=("pure", "combined"), default="pure")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth-dir", default=None, help="optional depth maps for haze")

    for name in ("train", "finetune"):
        p = sub.add_parser(name, help=f"run {name} step")
        p.add_argument("--config", default=None, help="run configuration file")
        p.add_argument("--resume", default=None, help="checkpoint to continue from")
        p.add_argument("--iters", type=int, required=True)
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("restore", help="restore images with a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=("mbn", "rmbn"), default="rmbn")
    p.add_argument("--factor", choices=[f.value for f in Factor], default=None)
    p.add_argument("--order", default=None, help="comma-separated factor order")
    p.add_argument("--trace", action="store_true", help="dump per-stage intermediates")

    p = sub.add_parser("eval", help="evaluate a model against a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("mbn", "rmbn"), default="rmbn")
    p.add_argument("--factor", choices=[f.value for f in Factor], default=None)
    p.add_argument("--order", default=None)
    p.add_argument("--y-channel", action="store_true")
    p.add_argument("--out", default=None, help="report file (writes .jsonl twin)")

    p = sub.add_parser("params", help="report parameter counts per component")
    p.add_argument("--config", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--out", default=None)
    return parser


def _load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_config(path)


def _require_datasets(config: RunConfig, config_dir) -> dict:
    if not config.paths:
        raise UsageError("config must set paths.<factor> manifest entries for training")
    manifests = {}
    for factor in Factor:
        if factor.value not in config.paths:
            raise UsageError(f"config is missing paths.{factor.value}")
        path = Path(config.paths[factor.value])
        if not path.is_absolute() and config_dir is not None:
            path = Path(config_dir) / path
        manifests[factor] = path
    return datasets_from_manifests(manifests)


def _cmd_synth(args) -> int:
    manifest = degrade.build_dataset(args.src, args.out, mode=args.mode,
                                     seed=args.seed, depth_dir=args.depth_dir)
    print(manifest)
    return EXIT_OK


def _resume_state(args, config: RunConfig):
    model = MultiBranchNet(config.model)
    start = 0
    if args.resume:
        payload = load_checkpoint(args.resume)
        model = model_from_checkpoint(payload)
        start = payload["iteration"]
    return model, start


def _cmd_train(args) -> int:
    config = _load_run_config(args.config)
    config_dir = Path(args.config).parent if args.config else None
    torch.manual_seed(config.seed)
    model, start = _resume_state(args, config)
    datasets = _require_datasets(config, config_dir)
    out = Path(args.out)
    result = train_joint(model, datasets, config.optim, config.cycle, args.iters,
                         seed=config.seed + start, augment=config.augment,
                         log_path=out / "train_log.jsonl", out_dir=out,
                         checkpoint_every=config.checkpoint_every,
                         start_iteration=start, run_config=config_to_flat(config))
    print(f"config {config_hash(config)}")
    print(f"trained {args.iters} iterations -> {result.checkpoint_path}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    config = _load_run_config(args.config)
    config_dir = Path(args.config).parent if args.config else None
    torch.manual_seed(config.seed)
    model, start = _resume_state(args, config)
    datasets = _require_datasets(config, config_dir)
    out = Path(args.out)
    result = finetune_recurrent(model, datasets, config.finetune, config.order,
                                args.iters, cycle_spec=config.cycle,
                                seed=config.seed + start,
                                log_path=out / "finetune_log.jsonl", out_dir=out,
                                start_iteration=start,
                                run_config=config_to_flat(config))
    print(f"config {config_hash(config)}")
    print(f"fine-tuned {args.iters} iterations -> {result.checkpoint_path}")
    return EXIT_OK


def _restore_one(model, path, out_dir, args, order):
    img = to_tensor(load_image(path)).unsqueeze(0)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(path).stem
    with torch.no_grad():
        if args.mode == "mbn":
            restored = mbn_restore(model, img, Factor(args.factor))
        else:
            trace = rmbn_restore(model, img, order)
            restored = trace.final
            if args.trace:
                for i, (factor, stage) in enumerate(zip(trace.order, trace.stages), 1):
                    save_image(out_dir / f"{stem}.stage{i}_{factor.value}.png",
                               from_tensor(stage))
    save_image(out_dir / f"{stem}.restored.png", from_tensor(restored))


def _cmd_restore(args) -> int:
    if args.mode == "mbn" and args.factor is None:
        raise UsageError("--mode mbn requires --factor")
    order = parse_order(args.order) if args.order else None
    payload = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(payload)
    model.eval()
    source = Path(args.input)
    if source.is_dir():
        paths = list_images(source)
        if not paths:
            raise DataError(f"no images under {source}")
    elif source.is_file():
        paths = [source]
    else:
        raise DataError(f"input not found: {source}")
    for path in paths:
        _restore_one(model, path, Path(args.out), args,
                     order if order is not None else DEFAULT_RESTORE_ORDER)
    print(f"restored {len(paths)} image(s) -> {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    if args.mode == "mbn" and args.factor is None:
        raise UsageError("--mode mbn requires --factor")
    payload = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(payload)
    order = parse_order(args.order) if args.order else None
    run_flat = payload.get("run_config")
    chash = config_hash(config_from_flat(run_flat)) if run_flat else ""
    report = evaluate(model, args.manifest, mode=args.mode,
                      factor=Factor(args.factor) if args.factor else None,
                      order=order, y_channel=args.y_channel, config_hash=chash)
    print(report)
    if args.out:
        write_report(report, args.out)
    return EXIT_OK


def _cmd_params(args) -> int:
    if args.ckpt:
        payload = load_checkpoint(args.ckpt)
        model = model_from_checkpoint(payload)
        run_flat = payload.get("run_config")
        config = config_from_flat(run_flat) if run_flat else None
    else:
        config = _load_run_config(args.config)
        model = MultiBranchNet(config.model)
    report = param_report(model)
    text = str(report)
    if config is not None:
        text += f"\nconfig {config_hash(config)}"
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "finetune": _cmd_finetune,
    "restore": _cmd_restore,
    "eval": _cmd_eval,
    "params": _cmd_params,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
