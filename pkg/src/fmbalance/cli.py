"""Command-line entry point: ``fmbalance <command> --config <file>``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__, pipeline
from .config import load_config
from .errors import (ConditioningError, ConfigurationError, IntegrationError, MissingArtifactError,
                     SamplingError, TrainingError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

HELP = {
    "gen-gm": "generate the synthetic record pool and select spectrum-compatible records",
    "extract-gmf": "compute the ground-motion features of every pool record",
    "mcs": "Monte Carlo response-history analyses (the imbalanced dataset)",
    "select-features": "cross-validated selection of critical features",
    "identify-modes": "adaptive surrogates, n-ball probing and failure-mode densities",
    "reconstruct": "sample mode densities, reconstruct motions and build the balanced dataset",
    "train-dnn": "train classifiers on the balanced and imbalanced datasets",
    "report": "cross-evaluate the classifiers and write the summary report",
    "run-all": "run every stage in order",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="fmbalance", description="Balanced failure-mode datasets for seismic analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI configuration file (desk.cfg is shipped)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--jobs", type=int, help="worker threads for data-parallel stages")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*pipeline.STAGES, "run-all"):
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigurationError("--jobs must be at least 1")
            cfg.jobs = args.jobs
        if args.command == "run-all":
            pipeline.run_all(cfg)
        else:
            pipeline.run_stage(args.command, cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (IntegrationError, ConditioningError, TrainingError, SamplingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
