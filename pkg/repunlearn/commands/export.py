"""export: every CSV of an output directory as one Excel workbook"""
from pathlib import Path

from repunlearn.commands.common import add_common_flags, resolve_config
from repunlearn.storage import export_workbook


def cmd_export(args) -> int:
    root = Path(resolve_config(args).output_dir)
    export_workbook(root, Path(args.output) if args.output else root / "results.xlsx")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("export", help="Collect the output directory's CSV tables into an .xlsx workbook")
    add_common_flags(p)
    p.add_argument("--output", type=str, default=None, help="Workbook path (default <out>/results.xlsx)")
    p.set_defaults(func=cmd_export)
