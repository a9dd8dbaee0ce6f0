"""Command-line front end.

    rwre <experiment> --config cfg.json [--seed N] [--replicas N]
                      [--out report.csv] [--workers N]

The config is a JSON document embedding the environment plus experiment
fields; command-line flags override it.  Exit codes: 0 success, 2 config
error, 3 regime or window error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from .errors import (
    ArithmeticSpec,
    ConfigError,
    GridUnstable,
    HorizonExceeded,
    MomentDiverges,
    NoPositiveRoot,
    NotStabilized,
    NotTransient,
    OutOfDomain,
    PopulationOverflow,
    RegimeMismatch,
    TiltUnavailable,
    TooFewSamples,
    WindowDegenerate,
)
from .harness import EXPERIMENTS, ExperimentConfig, run_experiment

_REGIME_ERRORS = (RegimeMismatch, WindowDegenerate, OutOfDomain, NotTransient,
                  ArithmeticSpec)
_NUMERICAL_ERRORS = (NoPositiveRoot, MomentDiverges, GridUnstable, NotStabilized,
                     TooFewSamples, HorizonExceeded, PopulationOverflow,
                     TiltUnavailable)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rwre",
        description="Simulation experiments for walks in random environments",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replicas", type=int, default=None)
        p.add_argument("--out", default=None, help="output CSV path")
        p.add_argument("--workers", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        config = ExperimentConfig.from_json(
            doc, experiment=args.experiment, seed=args.seed,
            replicas=args.replicas, out=args.out, workers=args.workers,
        )
        result = run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _REGIME_ERRORS as exc:
        print(f"regime/window error: {exc}", file=sys.stderr)
        return 3
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    if config.experiment == "analyze-env":
        text = json.dumps(result, indent=2, sort_keys=True)
        if config.out:
            with open(config.out, "w", newline="\n") as fh:
                fh.write(text + "\n")
        else:
            print(text)
    elif not config.out:
        print(f"{config.experiment}: done ({config.replicas} replicas); "
              "no --out given, report discarded", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
