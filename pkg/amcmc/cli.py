"""
Command-line front end: `amcmc <subcommand> [--config FILE] [flags]`.

Exit status is 0 on success, 1 when verify-finite finds a failing check and
2 on any validation or I/O error, which is also reported as one JSON record
on stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import ExperimentConfig, apply_overrides, load_config
from .errors import AmcmcError
from .experiments import RUNNERS, run_subcommand, write_artifacts

logger = logging.getLogger("amcmc")

HELP = {
    "bounds": "Tabulate the TV and L2 error bounds over path lengths.",
    "mixtimes": "Worst-case mixing times over alpha x delta.",
    "compminimax": "Optimal approximation error versus computational budget.",
    "verify-finite": "Check every closed-form bound against exact finite chains.",
    "mixture": "Exact and Gaussian-approximate latent class samplers.",
    "logistic": "Exact and subset Polya-Gamma logistic samplers.",
    "gp": "Low-rank Gaussian process marginal sampler over accuracy levels.",
    "diagnose": "Convergence diagnostics for an existing trace CSV.",
}


def _setup_logging(verbose: int) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[amcmc] %(levelname)s %(message)s"))
    root = logging.getLogger("amcmc")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose > 1 else logging.INFO if verbose == 1 else logging.WARNING)
    root.propagate = False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amcmc", description="Approximate MCMC error bounds and samplers.")
    parser.add_argument("--version", action="version", version=f"amcmc {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", type=Path, help="TOML experiment file.")
        p.add_argument("--seed", type=int, help="Run seed; required for stochastic subcommands.")
        p.add_argument("--out", type=str, help="Output directory for CSVs and manifest.json.")
        p.add_argument("--threads", type=int, help="Worker threads for independent cells.")
        budget = p.add_mutually_exclusive_group()
        budget.add_argument("--budget-steps", type=int, help="Recorded steps per chain.")
        budget.add_argument("--budget-seconds", type=float, help="Wall-time budget per chain.")
        p.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug.")
    return parser


def _error_record(exc: BaseException, subcommand: Optional[str]) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "subcommand": subcommand})


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        config = load_config(args.config) if args.config else ExperimentConfig()
        config = apply_overrides(config, seed=args.seed, out=args.out, threads=args.threads,
                                 budget_steps=args.budget_steps, budget_seconds=args.budget_seconds)
        if args.budget_steps is not None:
            config.budget_seconds = None
        elif args.budget_seconds is not None:
            config.budget_steps = None
        result = run_subcommand(args.subcommand, config)
        write_artifacts(Path(config.out), args.subcommand, config, result)
    except (AmcmcError, OSError) as exc:
        print(_error_record(exc, args.subcommand), file=sys.stderr)
        return 2
    if not result.passed:
        logger.warning("%s: one or more checks failed", args.subcommand)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
