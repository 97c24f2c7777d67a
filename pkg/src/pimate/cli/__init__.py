"""Batch command line: ``pimate CONFIG [--seed N] [--out DIR] ...``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, ExperimentKind, bank_names, load_config, parse_config
from .output import Table, emit_csv, emit_plot
from .runner import NumericalFailure, RunManifest, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pimate",
        description="Run one chain/cavity experiment from a TOML config and write CSV, SVG and a manifest.",
        epilog="Bundled configs: " + ", ".join(bank_names()),
    )
    parser.add_argument("config", help="path to a TOML config, or the name of a bundled config")
    parser.add_argument("--seed", type=int, help="override the base seed")
    parser.add_argument("--out", type=Path, help="output directory (default: ./out/<label>)")
    parser.add_argument("--no-plots", action="store_true", help="write data files only")
    parser.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads for sweeps and ensembles")
    parser.add_argument("--normalize", action="store_true", help="max-normalize plotted trapping curves")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads: must be at least 1")
        config = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: must be non-negative")
            config = dataclasses.replace(config, seed=args.seed)
        if args.normalize:
            config = dataclasses.replace(config, normalize=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out if args.out is not None else Path("out") / config.label
    try:
        manifest = run_experiment(config, out, plots=not args.no_plots, threads=args.threads)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for f in manifest.files:
        print(f"{out / f.name}  sha256:{f.sha256}")
    print(f"{out / 'manifest.json'}  ({manifest.wall_clock_seconds:.2f} s)")
    return EXIT_OK


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentKind",
    "NumericalFailure",
    "RunManifest",
    "Table",
    "emit_csv",
    "emit_plot",
    "load_config",
    "main",
    "parse_config",
    "run_experiment",
]
