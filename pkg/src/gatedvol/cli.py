"""Command-line entry point: ``gatedvol <command> --config PATH``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .cli_io import (
    COMMANDS,
    EXIT_USAGE,
    _families,
    bundled_config_path,
    load_config,
    run_command,
)
from .errors import ConfigError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gatedvol", description="Gated volatility models")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value configuration file (default: bundled synthetic data)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", nargs="+", metavar="NAME", help="model families to run")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config or bundled_config_path())
        over = {}
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            over["seed"] = args.seed
        if args.model:
            over["models"] = _families(",".join(args.model))
        cfg = cfg.with_overrides(**over)
    except ConfigError as exc:
        print(f"gatedvol: {exc}", file=sys.stderr)
        return EXIT_USAGE
    code, artifacts = run_command(cfg, args.command, args.out)
    for a in artifacts:
        print(a)
    if code:
        print(f"gatedvol: {args.command} finished with exit code {code}; see manifest.json", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
