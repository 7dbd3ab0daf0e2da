"""Batch command-line front end.

Subcommands: ``analyze`` (full estimation chain on one dataset),
``montecarlo`` (per-cell summaries over a generator grid), ``simulate``
(export one synthetic draw). Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import load_config
from .errors import (
    ConfigError,
    DteBoundsError,
    EmptySample,
    GridCoverage,
    InsufficientPairs,
    InsufficientPeriods,
    MissingColumn,
    NoVariationInTreatment,
    NonBinaryTreatment,
    NonNumericOutcome,
    PipelineFailure,
    SolverNonconvergence,
    TooFewTreatedUnits,
)
from .pipeline import run_analysis, run_montecarlo, simulate_to_csv

DATA_ERRORS = (
    MissingColumn,
    NonBinaryTreatment,
    NoVariationInTreatment,
    NonNumericOutcome,
    EmptySample,
    TooFewTreatedUnits,
    InsufficientPairs,
    InsufficientPeriods,
)
NUMERIC_ERRORS = (
    SolverNonconvergence,
    PipelineFailure,
    GridCoverage,
    np.linalg.LinAlgError,
    FloatingPointError,
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dtebounds",
        description="Bounds on distributional treatment effects from short panels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("analyze", "run the full estimation chain on one dataset"),
        ("montecarlo", "summarize repeated synthetic runs over a grid"),
        ("simulate", "export one synthetic panel (observed + oracle)"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="YAML configuration file")
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="override config seed")
        cmd.add_argument("--threads", type=int, default=1, help="bootstrap worker threads")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out_dir = args.out if args.out is not None else cfg.output_dir
        if args.command == "analyze":
            run_analysis(cfg, out_dir, seed=args.seed, threads=args.threads)
        elif args.command == "montecarlo":
            run_montecarlo(cfg, out_dir, seed=args.seed, threads=args.threads)
        else:
            simulate_to_csv(cfg, out_dir, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        print(f"data error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 4
    except DteBoundsError as exc:
        print(f"data error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
