"""train: the original classifier for every seed"""
from repunlearn.commands.common import add_common_flags, resolve_config
from repunlearn.experiment import ExperimentRunner


def cmd_train(args) -> int:
    ExperimentRunner(resolve_config(args)).train_models()
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("train", help="Train the original model(s) into <out>/seed_<s>/original.json")
    add_common_flags(p)
    p.set_defaults(func=cmd_train)
