"""Command-line entry point: ``kslab <subcommand> --config PATH [--out DIR] [--seed N] [--parallelism N]``.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure,
4 a requested check failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import parse_config
from .errors import ConfigurationError, KSLabError, PreconditionError
from .run import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, PLOT_KINDS, emit_plotdata, run, sweep

SUBCOMMANDS = {
    "check-thresholds": "thresholds",
    "simulate": "simulate",
    "periodic": "periodic",
    "steady": "steady",
    "entire": "entire",
    "sweep": "sweep",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kslab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        sp.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--parallelism", type=int, default=1, help="worker processes for sweeps")
    sp = sub.add_parser("emit-plotdata")
    sp.add_argument("--out", required=True, type=Path, help="ledger directory of a finished run")
    sp.add_argument("--kind", required=True, help=f"one of {', '.join(PLOT_KINDS)}")
    return parser


def _load_raw(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read: {exc}", "config") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON: {exc}", "config") from None


def _dispatch(args) -> int:
    if args.command == "emit-plotdata":
        path = emit_plotdata(args.out, args.kind)
        print(path)
        return EXIT_OK
    raw = _load_raw(args.config)
    if not isinstance(raw, dict):
        raise ConfigurationError("top level must be an object", "config")
    raw["experiment"] = SUBCOMMANDS[args.command]
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.parallelism < 1:
        raise ConfigurationError("must be >= 1", "parallelism")
    base_dir = args.config.parent
    if raw["experiment"] == "sweep":
        led = sweep(raw, parallelism=args.parallelism, out_dir=args.out, base_dir=base_dir)
        print(led.summary_path)
        return EXIT_OK
    cfg = parse_config(raw, base_dir)
    led = run(cfg, args.out)
    print(json.dumps({"out": str(led.out_dir), "exit_code": led.exit_code, "status": led.result.get("status")}))
    return led.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KSLabError, ArithmeticError, OSError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
