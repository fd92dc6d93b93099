"""Command-line entry point: ``qbmtrain {train,gradcheck,seriesfit,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from ..densemath import ValidationError
from ..estimator.emulators import ShotBudgetError
from ..series import CertificationError
from .config import RunConfig
from .runs import run_gradcheck, run_seriesfit, run_subroutine_bench, run_train

SUBCOMMAND_MODE = {"gradcheck": "gradcheck", "seriesfit": "seriesfit", "bench": "subroutine-bench"}
TRAIN_METHODS = ("exact", "variational", "general")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qbmtrain", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "gradcheck", "seriesfit", "bench"):
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH", help="JSON run configuration")
        s.add_argument("--seed", type=int, metavar="N", help="run seed (instance seed follows the config)")
        s.add_argument("--out", metavar="DIR", help="output directory for run artifacts")
        s.add_argument(
            "--mode", metavar="NAME",
            help="training method (exact, variational, general) or a full mode name",
        )
        s.add_argument("--eps", type=float, metavar="X", help="target precision")
        s.add_argument("--shots", type=int, metavar="N", help="shots (bernoulli) or grid size (ae) per estimate")
        s.add_argument("--shot-model", choices=("exact", "bernoulli", "ae"), metavar="NAME")
        s.add_argument("--iterations", type=int, help="training iterations")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.command == "train":
        mode = args.mode or (cfg.mode if cfg.mode.startswith("train-") else "train-exact")
        if mode in TRAIN_METHODS:
            mode = f"train-{mode}"
        if not mode.startswith("train-"):
            raise ValueError(f"train needs a training method, got {mode!r}")
    else:
        mode = SUBCOMMAND_MODE[args.command]
        if args.mode and args.mode != mode:
            raise ValueError(f"--mode {args.mode!r} conflicts with subcommand {args.command!r}")
    cfg = replace(cfg, mode=mode)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.eps is not None:
        cfg.budget.eps = args.eps
        cfg.series.eps = args.eps
        cfg.gradcheck.general_eps = args.eps
    if args.shot_model is not None:
        cfg.shot_model.mode = args.shot_model
    if args.shots is not None:
        if cfg.shot_model.mode == "ae":
            cfg.shot_model.N = args.shots
        else:
            cfg.shot_model.shots = args.shots
    if args.iterations is not None:
        cfg.optimizer.iterations = args.iterations
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "train":
            rec = run_train(cfg)
            report = dict(rec.summary, mode=rec.mode, wall_clock=rec.wall_clock, passed=rec.passed)
        elif args.command == "gradcheck":
            report = run_gradcheck(cfg)
        elif args.command == "seriesfit":
            report = run_seriesfit(cfg)
        else:
            report = run_subroutine_bench(cfg)
    except (ValidationError, CertificationError, ShotBudgetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report, indent=2, default=float))
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
