"""run: every stage for every seed"""
import logging

from repunlearn.commands.common import add_common_flags, resolve_config
from repunlearn.experiment import ExperimentRunner

logger = logging.getLogger(__name__)


def cmd_run(args) -> int:
    _, summary = ExperimentRunner(resolve_config(args), jobs=args.jobs).run()
    for _, row in summary.iterrows():
        logger.info(
            "%-8s retain %.2f ± %.2f | forget %.2f ± %.2f | MIA %.2f ± %.2f | CE %.4f ± %.4f",
            row["method"], row["retain_acc_mean"], row["retain_acc_std"], row["forget_acc_mean"], row["forget_acc_std"],
            row["mia_acc_mean"], row["mia_acc_std"], row["test_ce_mean"], row["test_ce_std"],
        )
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("run", help="Data, training, baselines, unlearning and evaluation in one go")
    add_common_flags(p, jobs=True)
    p.set_defaults(func=cmd_run)
