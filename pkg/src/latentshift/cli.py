"""Command-line entry point: ``latentshift <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import pipeline
from .errors import LatentShiftError
from .shifter import ARCH_NAMES


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="report/table format")

    parser = argparse.ArgumentParser(prog="latentshift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("world", parents=[common], help="create and persist a synthetic world")
    for name, text in (("fit-axis", "fit feature axes by regression"),
                       ("build-pairs", "build shifted-pairs datasets")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--feature", action="append", help="restrict to this feature (repeatable)")

    p = sub.add_parser("train", parents=[common], help="train latent feature shifters")
    p.add_argument("--feature", action="append")
    p.add_argument("--arch", choices=ARCH_NAMES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)

    p = sub.add_parser("shift", parents=[common], help="shift latents from an NPY file")
    p.add_argument("--input", required=True, help="(n, d) float32 NPY file")
    p.add_argument("--method", choices=("axis", "model", "chain"), default="model")
    p.add_argument("--feature", action="append", required=True)
    p.add_argument("--label", type=float, action="append", help="label per model (default 1)")
    p.add_argument("--multiplier", type=float, default=1.0, help="baseline shift multiplier")
    p.add_argument("--output", help="output NPY path")

    p = sub.add_parser("eval", parents=[common], help="A/B threshold-count evaluation")
    p.add_argument("--feature", action="append")
    p.add_argument("--mode", choices=("single", "multi"))

    p = sub.add_parser("compare", parents=[common], help="train architectures a-e on one dataset")
    p.add_argument("--feature")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)

    sub.add_parser("run-all", parents=[common], help="world, fit-axis, build-pairs, train, eval")
    return parser


def _apply_train_flags(cfg, args):
    changes = {}
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "learning_rate", None) is not None:
        changes["learning_rate"] = args.learning_rate
    if changes:
        cfg = replace(cfg, train=replace(cfg.train, **changes))
    return cfg


def run(argv=None) -> dict:
    args = _parser().parse_args(argv)
    cfg = pipeline.load_config(args.config, seed=args.seed, out=args.out)
    cfg = _apply_train_flags(cfg, args)
    cmd = args.command
    if cmd == "world":
        return pipeline.cmd_world(cfg)
    if cmd == "fit-axis":
        return pipeline.cmd_fit_axis(cfg, args.feature)
    if cmd == "build-pairs":
        return pipeline.cmd_build_pairs(cfg, args.feature)
    if cmd == "train":
        return pipeline.cmd_train(cfg, args.feature, args.arch)
    if cmd == "shift":
        return pipeline.cmd_shift(cfg, args.input, args.method, args.feature, args.label,
                                  args.multiplier, args.output)
    if cmd == "eval":
        return pipeline.cmd_eval(cfg, args.mode, args.format, args.feature)
    if cmd == "compare":
        return pipeline.cmd_compare(cfg, args.feature, args.format)
    return pipeline.run_all(cfg, args.format)


def main(argv=None) -> int:
    try:
        summary = run(argv)
    except LatentShiftError as exc:
        print(f"error:{exc.category}: " + str(exc).replace("\n", " "), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
