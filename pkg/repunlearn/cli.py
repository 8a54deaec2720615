"""Command-line entry point: one subcommand module per experiment stage"""
import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from repunlearn import __version__
from repunlearn.commands import bounds, data, evaluate, export, plots, run, sweep, train, unlearn
from repunlearn.errors import RepUnlearnError
from repunlearn.log import LOG_ENV_VAR, configure_logging

logger = logging.getLogger(__name__)

COMMAND_MODULES = (data, train, unlearn, evaluate, run, sweep, bounds, plots, export)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repunlearn",
        description="Representation unlearning experiments on the Gaussian-mixture toy benchmark",
        epilog=f"Log level is read from ${LOG_ENV_VAR} (default INFO).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for module in COMMAND_MODULES:
        module.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Exit code 0 on success, 1 on a failed stage or invalid config, 2 on bad arguments"""
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        return args.func(args)
    except RepUnlearnError as e:
        logger.error("%s", e)
        return 1
    except ValidationError as e:
        logger.error("Invalid configuration:\n%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
