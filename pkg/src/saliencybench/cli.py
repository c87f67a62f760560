"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import RunConfig, parse_config_text
from .errors import ConfigError, SaliencyBenchError, StageError
from .pipeline import (emit_report, ensure_attributions, ensure_data,
                       ensure_model, evaluate, run_pipeline)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--seed", type=int, help="master RNG seed override")
    parser.add_argument("--out", help="output run directory override")
    parser.add_argument("--estimators", help="comma-separated estimator list")
    parser.add_argument("--variants", help="comma-separated variant list")
    parser.add_argument("--jobs", type=int, help="worker pool size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saliencybench",
        description="Train a toy contrast classifier, compute pixel-importance "
                    "heatmaps, and score them with three evaluation metrics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
            ("gen-data", "generate the synthetic dataset"),
            ("train", "train the classifier (generates data if needed)"),
            ("attribute", "compute heatmaps for the eval subset"),
            ("report", "emit tables and plots from existing curves"),
            ("run", "run every stage end to end"),
            ("print-config", "print the merged configuration")]:
        _add_common(sub.add_parser(name, help=help_))
    eval_parser = sub.add_parser("eval", help="compute one evaluation metric")
    eval_parser.add_argument("metric", choices=["fidelity", "roc", "dsc"])
    _add_common(eval_parser)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        with open(args.config) as fh:
            values = parse_config_text(fh.read())
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.out is not None:
        values["out_dir"] = args.out
    if args.estimators is not None:
        values["estimators.list"] = args.estimators
    if args.variants is not None:
        values["variants"] = args.variants
    if args.jobs is not None:
        values["jobs"] = str(args.jobs)
    return RunConfig(values)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "print-config":
            sys.stdout.write(cfg.to_text())
        elif args.command == "gen-data":
            ensure_data(cfg)
        elif args.command == "train":
            ensure_model(cfg, ensure_data(cfg))
        elif args.command == "attribute":
            dataset = ensure_data(cfg)
            ensure_attributions(cfg, ensure_model(cfg, dataset), dataset)
        elif args.command == "eval":
            dataset = ensure_data(cfg)
            model = ensure_model(cfg, dataset)
            ensure_attributions(cfg, model, dataset)
            evaluate(cfg, model, dataset, (args.metric,))
        elif args.command == "report":
            emit_report(cfg)
        elif args.command == "run":
            run_pipeline(cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SaliencyBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
