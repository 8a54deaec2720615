"""init-config and gen-data"""
import logging

from repunlearn.commands.common import add_common_flags, resolve_config
from repunlearn.experiment import ExperimentRunner
from repunlearn.schemas import ExperimentConfig
from repunlearn.storage import save_config

logger = logging.getLogger(__name__)


def cmd_init_config(args) -> int:
    """Write the default config (with --out applied) to args.path"""
    config = ExperimentConfig()
    if args.out:
        config = config.model_copy(update={"output_dir": args.out})
    save_config(args.path, config)
    logger.info("✓ Wrote default config to %s", args.path)
    return 0


def cmd_gen_data(args) -> int:
    """Train/test mixture CSVs under <out>/data"""
    ExperimentRunner(resolve_config(args)).generate_data()
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("init-config", help="Write the default experiment config")
    p.add_argument("path", nargs="?", default="config.json")
    p.add_argument("--out", type=str, default=None, help="output_dir to record in the config")
    p.set_defaults(func=cmd_init_config)

    p = subparsers.add_parser("gen-data", help="Generate the Gaussian-mixture train/test CSVs")
    add_common_flags(p)
    p.set_defaults(func=cmd_gen_data)
