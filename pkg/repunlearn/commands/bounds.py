"""verify-bounds: certify the information bounds on random small channels"""
import logging
from pathlib import Path

import pandas as pd

from repunlearn.bounds_lab import REPORT_COLUMNS, certify_instances
from repunlearn.storage import OutputLayout, write_table

logger = logging.getLogger(__name__)


def cmd_verify_bounds(args) -> int:
    reports = certify_instances(args.instances, args.seed, args.samples)
    table = pd.DataFrame([r.as_row() for r in reports], columns=REPORT_COLUMNS)
    path = Path(args.output) if args.output else OutputLayout(Path(args.out)).bounds_csv
    write_table(table, path)

    failed = table.loc[table.verdict != "pass", "instance_seed"].nunique()
    logger.info("✓ %d/%d instances pass every bound; wrote %s", args.instances - failed, args.instances, path)
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("verify-bounds", help="Monte Carlo certification of the variational bounds")
    p.add_argument("--instances", type=int, default=100, help="Number of random channels")
    p.add_argument("--samples", type=int, default=2000, help="Monte Carlo draws per forget component")
    p.add_argument("--seed", type=int, default=0, help="Base seed; instance i uses a stream derived from (seed, i)")
    p.add_argument("--out", type=str, default="runs/default", help="Output directory (writes bounds.csv)")
    p.add_argument("--output", type=str, default=None, help="Explicit CSV path instead of <out>/bounds.csv")
    p.set_defaults(func=cmd_verify_bounds)
