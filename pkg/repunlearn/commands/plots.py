"""plot-repr: 2-D representation scatter, optionally after one or two transformations"""
import logging
from pathlib import Path

from repunlearn import storage
from repunlearn.commands.common import add_common_flags, resolve_config
from repunlearn.figures import plot_representations
from repunlearn.schemas import UnlearnModeEnum

logger = logging.getLogger(__name__)


def cmd_plot_repr(args) -> int:
    config = resolve_config(args)
    layout = storage.OutputLayout(Path(config.output_dir))
    seed = config.eval.seeds[0]

    net = storage.load_model(args.model or layout.model_path(seed, "original"))
    data = storage.load_dataset(args.data or layout.test_csv, config.dataset.n_classes)
    panels = [("original", None)]
    if args.transformation:
        panels.append(("standard", storage.load_transformation(args.transformation)))
    if args.zero_shot_transformation:
        panels.append(("zero-shot", storage.load_transformation(args.zero_shot_transformation)))
    if len(panels) == 1 and not args.model and layout.model_path(seed, "transformation").exists():
        panels.append(("unlearned", storage.load_transformation(layout.model_path(seed, "transformation"))))

    forget = config.unlearn.forget_classes if config.unlearn.mode == UnlearnModeEnum.CLASS else []
    output = Path(args.output) if args.output else layout.figures_dir / "representations.svg"
    plot_representations(net, data, output, panels, forget)
    logger.info("✓ Wrote %s (%d panel(s))", output, len(panels))
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("plot-repr", help="SVG scatter of the 2-D penultimate representations")
    add_common_flags(p)
    p.add_argument("--model", type=str, default=None, help="Model JSON (default <out>/seed_<s>/original.json)")
    p.add_argument("--transformation", type=str, default=None, help="Standard-regime transformation JSON")
    p.add_argument("--zero-shot-transformation", type=str, default=None, help="Zero-shot transformation JSON")
    p.add_argument("--data", type=str, default=None, help="Dataset CSV (default <out>/data/test.csv)")
    p.add_argument("--output", type=str, default=None, help="SVG path (default <out>/figures/representations.svg)")
    p.set_defaults(func=cmd_plot_repr)
