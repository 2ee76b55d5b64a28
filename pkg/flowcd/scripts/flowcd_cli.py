"""The flowcd command line: forge data, train, evaluate, ablate, infer, time and draw."""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from colorama import Style

import flowcd
from flowcd import config, files, objectives, utils
from flowcd.exceptions import FlowCDError, FormatError, ValidationError
from flowcd.forge import dataset as forge_dataset
from flowcd.forge import sources

# Flag destinations and the config keys they override.
FLAG_KEYS = {
    "epochs": "epochs",
    "seed": "seed",
    "branch": "branch_selector",
    "batch_size": "batch_size",
    "device": "device",
    "manifest": "train_manifest",
    "test_manifest": "test_manifest",
    "samples": "forge.samples",
    "test_samples": "forge.test_samples",
    "backgrounds": "forge.backgrounds",
    "cutouts": "forge.cutouts",
    "delta": "eval.delta",
    "epsilon": "eval.epsilon",
    "threshold": "eval.threshold",
}

DATASET_DIR = "dataset"
CHECKPOINT_PATH = os.path.join("train", "checkpoint.ckpt")


def add_common_args(parser: argparse.ArgumentParser, run_flags: bool = True):
    parser.add_argument(
        "--config", help="Preset name (tiny, full) or path to a TOML / JSON config file."
    )
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config value, e.g. --set loss.psi=5. Values are parsed as JSON.",
    )
    parser.add_argument(
        "--out",
        default=None,
        help="Output root, defaults to $FLOWCD_OUT or ./runs.",
    )
    if run_flags:
        parser.add_argument("--seed", type=int, help="Random seed of the run.")
        parser.add_argument("--device", help="Torch device, defaults to $FLOWCD_DEVICE or cpu.")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="flowcd", description="Flow-CDNet change detection")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at debug level.")
    subparsers = parser.add_subparsers(title="Commands", dest="command")
    subparsers.required = True

    forge_parser = subparsers.add_parser("forge", help="Generate a synthetic change dataset.")
    add_common_args(forge_parser)
    forge_parser.add_argument(
        "--split", choices=["train", "test", "both"], default="train", help="Which split(s) to forge."
    )
    forge_parser.add_argument("--samples", type=int, help="Number of procedural train samples.")
    forge_parser.add_argument("--test-samples", type=int, help="Number of procedural test samples.")
    forge_parser.add_argument("--backgrounds", help="JSON manifest of background pairs with flow.")
    forge_parser.add_argument("--cutouts", help="JSON manifest of images with segmentation maps.")
    forge_parser.set_defaults(func=forge)

    train_parser = subparsers.add_parser("train", help="Train a model on a forged split.")
    add_common_args(train_parser)
    train_parser.add_argument("--manifest", help="Training dataset manifest or directory.")
    train_parser.add_argument("--epochs", type=int, help="Number of epochs, 0 saves the initial weights.")
    train_parser.add_argument("--batch-size", type=int, help="Samples per batch.")
    train_parser.add_argument(
        "--branch", choices=config.BRANCH_SELECTORS, help="Which branches to train."
    )
    train_parser.set_defaults(func=train)

    eval_parser = subparsers.add_parser("eval", help="Evaluate a checkpoint.")
    add_common_args(eval_parser)
    eval_parser.add_argument("--checkpoint", help="Checkpoint to evaluate.")
    eval_parser.add_argument("--manifest", dest="test_manifest", help="Dataset manifest or directory.")
    eval_parser.add_argument("--delta", type=float, help="Motion threshold of mEPE in pixels.")
    eval_parser.add_argument("--epsilon", type=float, help="FEPE denominator offset.")
    eval_parser.add_argument("--threshold", type=float, help="Change probability threshold.")
    eval_parser.set_defaults(func=evaluate)

    ablate_parser = subparsers.add_parser("ablate", help="Train and evaluate each branch selection.")
    add_common_args(ablate_parser)
    ablate_parser.add_argument("--manifest", help="Training dataset manifest or directory.")
    ablate_parser.add_argument("--test-manifest", help="Evaluation manifest, defaults to the training one.")
    ablate_parser.add_argument("--epochs", type=int, help="Number of epochs per run.")
    ablate_parser.set_defaults(func=ablate)

    bench_parser = subparsers.add_parser("bench", help="Time inference of a checkpoint.")
    add_common_args(bench_parser)
    bench_parser.add_argument("--checkpoint", help="Checkpoint to time.")
    bench_parser.add_argument("--pairs", type=int, default=10, help="Number of timed pairs.")
    bench_parser.add_argument("--warmup", type=int, default=2, help="Number of untimed pairs first.")
    bench_parser.add_argument(
        "--size", type=int, nargs=2, metavar=("HEIGHT", "WIDTH"), help="Input size, defaults to the forge size."
    )
    bench_parser.set_defaults(func=bench)

    infer_parser = subparsers.add_parser("infer", help="Run a checkpoint on one image pair.")
    add_common_args(infer_parser)
    infer_parser.add_argument("t0", help="Image at time 0.")
    infer_parser.add_argument("t1", help="Image at time 1.")
    infer_parser.add_argument("--checkpoint", help="Checkpoint to run.")
    infer_parser.add_argument("--stem", default="pair", help="Prefix of the written files.")
    infer_parser.add_argument("--threshold", type=float, help="Change probability threshold.")
    infer_parser.set_defaults(func=infer)

    viz_parser = subparsers.add_parser("viz", help="Draw a t0 | t1 | flow | change panel.")
    add_common_args(viz_parser, run_flags=False)
    viz_parser.add_argument("manifest", help="Dataset manifest or directory.")
    viz_parser.add_argument("--id", dest="sample_id", help="Sample to draw, defaults to the first.")
    viz_parser.add_argument("--flow", help="Predicted .flo to draw instead of the label.")
    viz_parser.add_argument("--mask", help="Predicted change mask PNG to draw instead of the label.")
    viz_parser.add_argument("--output", help="Panel PNG path.")
    viz_parser.set_defaults(func=viz)

    return parser.parse_args(argv)


def flag_overrides(args: argparse.Namespace) -> List[str]:
    keys = dict(FLAG_KEYS, seed="forge.seed") if args.command == "forge" else FLAG_KEYS
    overrides = []
    for dest, key in keys.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return overrides


def explicit_settings(args: argparse.Namespace) -> Dict[str, Any]:
    """The config keys this invocation sets, from the config file, --set and flags."""
    d = config.read_config_file(args.config) if args.config else {}
    return config.apply_overrides(d, [*args.set, *flag_overrides(args)])


def load_run_config(args: argparse.Namespace) -> config.RunConfig:
    return config.RunConfig.from_dict(explicit_settings(args))


def out_root(args: argparse.Namespace) -> str:
    return args.out or utils.EnvVarConstants.OUT_ROOT


def forge(args):
    cfg = load_run_config(args)
    logger = logging.getLogger("flowcd")
    splits = ["train", "test"] if args.split == "both" else [args.split]
    for split in splits:
        backgrounds, cutouts = sources.get_sources(cfg.forge, split)
        out_dir = os.path.join(out_root(args), DATASET_DIR, split)
        manifest = forge_dataset.forge_dataset(backgrounds, cutouts, cfg.forge, out_dir, split)
        counts = manifest.counts
        logger.debug(f"Manifest written to {os.path.join(out_dir, forge_dataset.MANIFEST_NAME)}")
        print(
            f"{split}: {counts['samples']} samples, {counts['pastes']} pastes, "
            f"seed {cfg.forge.seed} -> {out_dir}"
        )


def _dataset(path: Optional[str], args, split: str) -> forge_dataset.DatasetManifest:
    return forge_dataset.DatasetManifest.load(
        path or os.path.join(out_root(args), DATASET_DIR, split)
    )


def train(args):
    from flowcd import harness

    cfg = load_run_config(args)
    manifest = _dataset(cfg.train_manifest, args, "train")
    out_dir = os.path.join(out_root(args), "train")
    result = harness.train(cfg, manifest, out_dir)
    final = result.report
    print(
        f"trained {cfg.branch_selector} for {cfg.epochs} epochs: "
        f"F1 {objectives.format_cell(final.f1)} mEPE {objectives.format_cell(final.mepe)} "
        f"FEPE {objectives.format_cell(final.fepe)} -> {out_dir}"
    )


def _checkpoint_path(args) -> str:
    return args.checkpoint or os.path.join(out_root(args), CHECKPOINT_PATH)


def evaluate(args):
    from flowcd import harness

    settings = explicit_settings(args)
    cfg = config.RunConfig.from_dict(settings)
    manifest = _dataset(cfg.test_manifest, args, "test")
    # The checkpoint supplies every eval setting this invocation leaves out.
    report = harness.evaluate(
        _checkpoint_path(args),
        manifest,
        device=settings.get("device"),
        eval_overrides=settings.get("eval", {}),
    )
    out_dir = os.path.join(out_root(args), "eval")
    os.makedirs(out_dir, exist_ok=True)
    report.write_json(os.path.join(out_dir, "metrics.json"))
    report.write_csv(os.path.join(out_dir, "metrics.csv"))
    print(f"{'F1':>8}{'mEPE':>8}{'FEPE':>8}")
    print(
        f"{objectives.format_cell(report.f1):>8}{objectives.format_cell(report.mepe):>8}"
        f"{objectives.format_cell(report.fepe):>8}"
    )
    if report.flags:
        print(f"flags: {', '.join(report.flags)}")
    if report.errors:
        for sample_id, message in report.errors.items():
            print(f"flowcd eval: sample {sample_id} skipped: {message}", file=sys.stderr)
        return 1


def ablate(args):
    from flowcd import harness

    cfg = load_run_config(args)
    train_manifest = _dataset(cfg.train_manifest, args, "train")
    test_manifest = (
        forge_dataset.DatasetManifest.load(cfg.test_manifest) if cfg.test_manifest else None
    )
    out_dir = os.path.join(out_root(args), "ablate")
    table = harness.ablate(cfg, train_manifest, test_manifest, out_dir)
    header, *rows = table.lines()
    print(f"{Style.BRIGHT}{header}{Style.RESET_ALL}")
    print("-" * len(header))
    for row in rows:
        print(row)


def bench(args):
    from flowcd import harness

    report = harness.bench(
        _checkpoint_path(args),
        n_pairs=args.pairs,
        warmup=args.warmup,
        size=tuple(args.size) if args.size else None,
        device=args.device,
    )
    out_dir = os.path.join(out_root(args), "bench")
    os.makedirs(out_dir, exist_ok=True)
    report.write_json(os.path.join(out_dir, "bench.json"))
    print(
        f"{report.pairs} pairs ({report.warmup} warmup) on {report.device}: "
        f"{report.mean_seconds:.4f} s/pair, {report.fps:.2f} FPS"
    )


def infer(args):
    from flowcd import harness

    written = harness.infer_pair(
        _checkpoint_path(args),
        args.t0,
        args.t1,
        os.path.join(out_root(args), "infer"),
        stem=args.stem,
        threshold=args.threshold,
        device=args.device,
    )
    for kind, path in sorted(written.items()):
        print(f"{kind}: {path}")


def _read_input(path, load):
    """Run ``load()``, an unreadable or malformed ``path`` is a usage error."""
    try:
        return load()
    except (OSError, FormatError) as e:
        raise ValidationError(f"cannot read {path}: {e}") from e


def viz(args):
    from flowcd import harness

    manifest = _read_input(args.manifest, lambda: forge_dataset.DatasetManifest.load(args.manifest))
    sample_id = args.sample_id or manifest.ids[0]
    if sample_id not in manifest.ids:
        raise ValidationError(f"{args.manifest} has no sample {sample_id!r}")
    sample = _read_input(args.manifest, lambda: manifest.read(manifest.ids.index(sample_id)))
    flow = _read_input(args.flow, lambda: files.read_flo(args.flow)) if args.flow else None
    mask = _read_input(args.mask, lambda: files.read_mask(args.mask)) if args.mask else None
    output = args.output or os.path.join(out_root(args), "viz", f"{sample_id}.png")
    os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
    harness.write_panel(output, sample, flow, mask)
    print(output)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    flowcd.scripts.configure_logging(f"flowcd {args.command}", level="DEBUG" if args.verbose else None)
    try:
        return args.func(args) or 0
    except FlowCDError as e:
        print(f"flowcd {args.command}: error[{e.kind}]: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"flowcd {args.command}: error[io]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
