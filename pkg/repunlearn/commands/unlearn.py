"""unlearn: fit the transformation on top of saved original models"""
from repunlearn.commands.common import add_common_flags, resolve_config
from repunlearn.experiment import ExperimentRunner


def cmd_unlearn(args) -> int:
    ExperimentRunner(resolve_config(args)).unlearn_models()
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser(
        "unlearn", help="Run the configured unlearning regime; writes transformation.json and access_log.json"
    )
    add_common_flags(p)
    p.set_defaults(func=cmd_unlearn)
