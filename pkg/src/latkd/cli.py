"""Command-line entry point.

Subcommands: preprocess, generate, experiment, k-sweep, benchmark, report.
Failures exit nonzero with a machine-parseable JSON envelope on stderr; the
run-directory root defaults to $LATKD_RUNS_DIR (falling back to ./latkd-runs).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError, LatkdError

RUNS_DIR_ENV = "LATKD_RUNS_DIR"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # JSON envelope instead of argparse's exit(2)
        raise _UsageError(message)


def _runs_root(args) -> Path:
    if args.run_root:
        return Path(args.run_root)
    return Path(os.environ.get(RUNS_DIR_ENV, "latkd-runs"))


def build_parser() -> _Parser:
    parser = _Parser(prog="latkd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="CSV -> schema + per-month frame files")
    p.add_argument("--config", required=True, help="preprocessing config JSON")
    p.add_argument("--input", help="override the config's input CSV path")
    p.add_argument("--out", required=True, help="output directory for frames/schema")

    p = sub.add_parser("generate", help="materialize a synthetic drift scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("experiment", help="run variant x period x seed training cells")
    p.add_argument("--config", required=True)
    p.add_argument("--run-root", help=f"runs root (default ${RUNS_DIR_ENV} or ./latkd-runs)")

    p = sub.add_parser("k-sweep", help="validation AUPRC per truncation K on one frame")
    p.add_argument("--config", required=True)
    p.add_argument("--frame", required=True, type=int, help="frame index t")
    p.add_argument("--run-root")

    p = sub.add_parser("benchmark", help="cumulative vs window-chain runtime per frame")
    p.add_argument("--config", required=True)
    p.add_argument("--run-root")

    p = sub.add_parser("report", help="regenerate tables from a run manifest")
    p.add_argument("--run", required=True, help="run directory containing manifest.json")

    return parser


def _dispatch(args) -> int:
    if args.command == "preprocess":
        cfg = harness.load_config(args.config, {"input": args.input})
        summary = harness.run_preprocess(cfg, args.out, base=Path(args.config).parent)
        sys.stdout.write(harness.render_preprocess(summary))
        return 0
    if args.command == "generate":
        info = harness.run_generate(args.scenario, args.out)
        sys.stdout.write(
            f"wrote {info['frames']} frames x {info['rows_per_frame']} rows "
            f"({info['feature_dim']} features) to {info['out_dir']}\n"
        )
        return 0
    if args.command == "experiment":
        cfg = harness.load_config(args.config)
        result = harness.run_experiment(cfg, _runs_root(args), base=Path(args.config).parent)
        sys.stdout.write(harness.render_experiment_tables(result.manifest))
        sys.stdout.write(f"\nrun dir: {result.run_dir}\n")
        sys.stdout.write(f"manifest hash: {result.manifest.manifest_hash}\n")
        return 0
    if args.command == "k-sweep":
        cfg = harness.load_config(args.config)
        result = harness.run_k_sweep(cfg, args.frame, _runs_root(args), base=Path(args.config).parent)
        sys.stdout.write(harness.render_k_sweep(result))
        return 0
    if args.command == "benchmark":
        cfg = harness.load_config(args.config)
        result = harness.run_benchmark(cfg, _runs_root(args), base=Path(args.config).parent)
        sys.stdout.write(harness.render_benchmark(result))
        return 0
    if args.command == "report":
        sys.stdout.write(harness.run_report(args.run))
        return 0
    raise ConfigError(f"unknown command {args.command!r}")


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _emit_error("UsageError", str(exc))
        return 2
    try:
        return _dispatch(args)
    except LatkdError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    except Exception as exc:  # unexpected: still machine-parseable
        _emit_error(type(exc).__name__, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
