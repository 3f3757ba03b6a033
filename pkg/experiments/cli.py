"""
cli.py - command-line entry point for the experiment harness.

Usage:

    python -m experiments spectrum --preset single_edge
    python -m experiments spread --preset fig3 --seed 7 --out outputs/fig3_seed7
    python -m experiments train --config my_train.json --set training.epochs=50
    python -m experiments train --config outputs/train_smoke/manifest.json --out rerun

Exit codes: 0 success, 1 failed claim, 2 usage or config error, 3 numeric failure.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import argparse
import pathlib
import sys
from typing import Any, Callable, Mapping, Optional, Sequence

# Import functions from local modules
from core.core_errors import DBGNNError, NumericOverflowError
from experiments import (
    dirichlet_experiment,
    gradcheck_experiment,
    spectrum_experiment,
    spread_experiment,
    train_experiment,
)
from utils.utils_config import COMMANDS, resolve_config
from utils.utils_logger import logger

RUNNERS: dict[str, Callable[[Mapping[str, Any]], int]] = {
    "spectrum": spectrum_experiment.run,
    "spread": spread_experiment.run,
    "dirichlet": dirichlet_experiment.run,
    "train": train_experiment.run,
    "gradcheck": gradcheck_experiment.run,
}

HELP = {
    "spectrum": "Dirac operator eigenvalues and the mass-gap check",
    "spread": "feature spreading heatmaps and front tracking",
    "dirichlet": "Dirichlet energy of an untrained DBGNN against a deep GCN",
    "train": "train a DBGNN on a synthetic long-range task",
    "gradcheck": "tape gradients against finite differences",
}

#####################################
# Argument Parsing
#####################################


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 2 through the logger."""

    def error(self, message: str):
        logger.error(f"Usage error: {message}")
        self.print_usage(sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="python -m experiments", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command in COMMANDS:
        p = sub.add_parser(command, help=HELP[command])
        p.add_argument("--config", type=pathlib.Path, help="JSON config or manifest.json")
        p.add_argument("--preset", help="named preset under data/presets/<command>/")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        p.add_argument(
            "--set",
            dest="sets",
            action="append",
            default=[],
            metavar="KEY=JSON",
            help="override one config field, e.g. training.epochs=50",
        )
    return parser


#####################################
# Main
#####################################


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger.info(f"START {args.command}")
    try:
        config = resolve_config(
            args.command,
            preset=args.preset,
            config_path=args.config,
            seed=args.seed,
            out=args.out,
            sets=args.sets,
        )
        code = RUNNERS[args.command](config)
    except NumericOverflowError as e:
        logger.error(f"Numeric overflow at step {e.step}: {e}")
        code = e.exit_code
    except DBGNNError as e:
        logger.error(f"{type(e).__name__}: {e}")
        code = e.exit_code
    logger.info(f"END {args.command} (exit code {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
