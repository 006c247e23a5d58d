"""Hybrid GEM/EIT memory simulator - command-line entry point.

Runs a single protocol or a parameter sweep from a TOML config and writes
plot-ready CSV files plus a ``manifest.json`` per run.

    python -m app.main run --config configs/gem_eit.toml --out-dir runs/gem_eit
    python -m app.main sweep --config configs/detuning_sweep.toml
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from app import __version__
from app.cli.commands import run_command, sweep_command
from app.core.config import settings

EMIT_CHOICES = ("fields", "trace", "spectrum", "metrics", "all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybrid-memory",
        description="Space-time simulation of gradient-echo and EIT light storage.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run one protocol"), ("sweep", "run every point of the sweep axes")):
        cmd = sub.add_parser(name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        cmd.add_argument("--config", type=Path, required=True, help="TOML run configuration")
        cmd.add_argument("--out-dir", type=Path, default=None,
                         help="output directory (default: OUTPUT_DIR/<config name>)")
        cmd.add_argument("--seed", type=int, default=None,
                         help="noise seed; falls back to the config, then HYBRID_MEMORY_SEED")
        cmd.add_argument("--emit", action="append", choices=EMIT_CHOICES, default=None,
                         help="outputs to write; repeat for several (overrides output.emit)")
        cmd.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(name)s - %(message)s",
    )
    command = run_command if args.command == "run" else sweep_command
    return command(args.config, out_dir=args.out_dir, seed=args.seed, emit=args.emit)


if __name__ == "__main__":
    sys.exit(main())
