"""Command-line entry point: ``semiverified {estimate,train,sweep} --config PATH``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .config import dump_config, parse_config
from .errors import ConfigError, SemiVerifiedError
from .runner import run_experiment

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _fail(payload: dict, code: int) -> int:
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semiverified",
        description="Semi-verified mean estimation and Byzantine-robust training experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--validate-config", metavar="PATH",
        help="parse and validate a config, print the resolved form, and exit",
    )
    sub = parser.add_subparsers(dest="command")
    for name in ("estimate", "train", "sweep"):
        p = sub.add_parser(name, help=f"run a {name} experiment")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--out", default=None, help="output directory (beats BYZSHIELD_OUT)")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.validate_config:
        try:
            config = parse_config(args.validate_config)
        except ConfigError as exc:
            return _fail(exc.to_dict(), EXIT_CONFIG_ERROR)
        print(dump_config(config))
        return EXIT_OK

    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        config = parse_config(args.config)
        if config.mode != args.command:
            raise ConfigError(
                f"config mode {config.mode!r} does not match command {args.command!r}", field="mode"
            )
        if args.seed is not None:
            config = config.model_copy(update={"master_seed": args.seed})
    except ConfigError as exc:
        return _fail(exc.to_dict(), EXIT_CONFIG_ERROR)

    out_dir = args.out or os.environ.get("BYZSHIELD_OUT") or config.output_dir
    config = config.model_copy(update={"output_dir": out_dir})
    try:
        written = run_experiment(config, out_dir, jobs=getattr(args, "jobs", 1))
    except SemiVerifiedError as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc)}, EXIT_RUN_ERROR)
    except OSError as exc:
        return _fail({"error": "IOError", "message": str(exc)}, EXIT_RUN_ERROR)
    print(json.dumps({"status": "ok", "written": written}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
