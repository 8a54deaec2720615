"""sweep: beta x depth grid"""
from repunlearn.commands.common import add_common_flags, resolve_config
from repunlearn.experiment import ExperimentRunner


def cmd_sweep(args) -> int:
    ExperimentRunner(resolve_config(args), jobs=args.jobs).sweep()
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("sweep", help="Sweep beta x depth; writes <out>/sweep/ tables and heatmaps")
    add_common_flags(p, jobs=True)
    p.set_defaults(func=cmd_sweep)
