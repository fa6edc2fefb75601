"""Command line entry point: ``regvi run|describe|validate``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import (
    EXIT_CONFIG,
    PRESETS,
    ConfigError,
    describe,
    load_config,
    load_preset,
    run_experiment,
)

log = logging.getLogger("regvi")


def _load(args):
    if args.preset:
        return load_preset(args.preset)
    if not args.config:
        raise ConfigError("a config path or --preset is required")
    return load_config(args.config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regvi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "execute the run matrix and write traces"),
        ("describe", "print the run matrix and derived constants"),
        ("validate", "check a config without running it"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", nargs="?", help="path to a JSON experiment config")
        p.add_argument("--preset", choices=PRESETS, help="use a bundled preset instead of a file")
        if name == "run":
            p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
            p.add_argument("--out", default=None, help="output directory (overrides config and env)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print(f"ok: {config.name} ({len(config.runs)} runs x {len(config.seeds)} seeds)")
        return 0
    if args.command == "describe":
        print(describe(config))
        return 0

    try:
        result = run_experiment(config, out=args.out, jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for run_name, seed in result.diverged:
        log.warning("run %s seed %d diverged", run_name, seed)
    log.info("wrote %s", result.output_dir)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
