"""Command-line front end for the experiment pipeline.

Every subcommand is a thin wrapper over one pipeline stage; state moves
between invocations through files under --out-dir. Steps fail with a
pointer to the missing prerequisite instead of recomputing it silently.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .core_types import ConfigurationError, DomainError, save_dataset
from .experiment import (
    METHODS,
    ExperimentConfig,
    cmd_calibrate,
    cmd_eval,
    cmd_infer,
    cmd_report,
    cmd_train_stage1,
    cmd_train_stage2,
    ensure_dataset,
    run_pipeline,
)
from .synthetic import generate


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed_override is not None:
        gen = dataclasses.replace(cfg.gen, seed=args.seed_override)
        cfg = dataclasses.replace(cfg, seed=args.seed_override, gen=gen)
    return cfg


def _add_common(p: argparse.ArgumentParser, fold: bool = False, method: bool = False) -> None:
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out-dir", required=True, help="run directory")
    p.add_argument("--seed-override", type=int, default=None,
                   help="replace the config seeds for this invocation")
    if fold:
        p.add_argument("--fold", type=int, required=True)
    if method:
        p.add_argument("--method", required=True, choices=METHODS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracmil",
        description="two-stage weakly supervised fracture classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("generate-data", help="write the synthetic dataset"))
    _add_common(sub.add_parser("train-stage1", help="train one stage-1 model"),
                fold=True, method=True)
    _add_common(sub.add_parser("calibrate", help="fit the mining threshold"), fold=True)
    _add_common(sub.add_parser("train-stage2", help="train the ROI classifier"), fold=True)
    _add_common(sub.add_parser("infer", help="score the fold's test split"),
                fold=True, method=True)
    _add_common(sub.add_parser("eval", help="metrics and curves for one method"),
                fold=True, method=True)
    _add_common(sub.add_parser("report", help="aggregate folds into report.json"))
    run_all = sub.add_parser("run-all", help="every stage, fold and method in order")
    _add_common(run_all)
    run_all.add_argument("--fold", type=int, default=None,
                         help="restrict to one fold (default: all)")
    run_all.add_argument("--method", default=None, choices=METHODS,
                         help="restrict to one method (default: all)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        out = Path(args.out_dir)
        if args.command == "generate-data":
            out.mkdir(parents=True, exist_ok=True)
            cfg.save(out / "config.json")
            root = out / "dataset"
            if not (root / "manifest.jsonl").is_file():
                save_dataset(generate(cfg.gen), root)
            print(f"dataset ready under {root}")
        elif args.command == "train-stage1":
            path = cmd_train_stage1(cfg, out, args.fold, args.method)
            print(f"stage-1 checkpoint: {path}")
        elif args.command == "calibrate":
            cal = cmd_calibrate(cfg, out, args.fold)
            print(f"p_hat={cal.p_hat:.6g} achieved_sensitivity={cal.achieved_sensitivity:.4f}")
        elif args.command == "train-stage2":
            path = cmd_train_stage2(cfg, out, args.fold)
            print(f"stage-2 checkpoint: {path}")
        elif args.command == "infer":
            path = cmd_infer(cfg, out, args.fold, args.method)
            print(f"scores: {path}")
        elif args.command == "eval":
            path = cmd_eval(cfg, out, args.fold, args.method)
            print(f"metrics: {path}")
        elif args.command == "report":
            path = cmd_report(cfg, out)
            print(f"report: {path}")
        elif args.command == "run-all":
            folds = None if args.fold is None else [args.fold]
            methods = None if args.method is None else (args.method,)
            run_pipeline(cfg, out, folds=folds, methods=methods)
            print(f"run complete under {out}")
    except (ConfigurationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
