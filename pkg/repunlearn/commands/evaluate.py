"""eval: score saved artifacts"""
from repunlearn.commands.common import add_common_flags, resolve_config
from repunlearn.experiment import ExperimentRunner


def cmd_eval(args) -> int:
    ExperimentRunner(resolve_config(args)).evaluate_models()
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("eval", help="Evaluate original, baselines and transformation into report.csv")
    add_common_flags(p)
    p.set_defaults(func=cmd_eval)
