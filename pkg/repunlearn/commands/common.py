"""Flags and config resolution shared by every subcommand"""
import argparse
import logging
from typing import Optional

from repunlearn.schemas import ExperimentConfig
from repunlearn.storage import load_config

logger = logging.getLogger(__name__)


def add_common_flags(parser: argparse.ArgumentParser, jobs: bool = False) -> None:
    parser.add_argument("--config", type=str, default=None, help="Experiment config JSON (defaults when omitted)")
    parser.add_argument("--out", type=str, default=None, help="Output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, default=None, help="Run a single seed instead of the configured list")
    if jobs:
        parser.add_argument("--jobs", type=int, default=1, help="Worker processes for independent seeds")


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or defaults) with --out and --seed applied"""
    config = load_config(args.config) if args.config else ExperimentConfig()
    update = {}
    if getattr(args, "out", None):
        update["output_dir"] = args.out
    seed: Optional[int] = getattr(args, "seed", None)
    if seed is not None:
        update["eval"] = config.eval.model_copy(update={"seeds": [seed]})
        update["sweep"] = config.sweep.model_copy(update={"seeds": [seed]})
    if update:
        config = ExperimentConfig.model_validate({**config.model_dump(), **{k: _dump(v) for k, v in update.items()}})
    logger.debug("Resolved config: %s", config.model_dump_json())
    return config


def _dump(value):
    return value.model_dump() if hasattr(value, "model_dump") else value
