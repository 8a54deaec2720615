"""
Representation Unlearning experiment harness.

Usage: python main.py <command> [--config CONFIG] [--out DIR] [--seed N] [--jobs N]
Commands: init-config, gen-data, train, unlearn, eval, run, sweep, verify-bounds, plot-repr, export
"""
import sys

from repunlearn.cli import main


if __name__ == "__main__":
    sys.exit(main())
