"""Command-line entry point.

Subcommands: train, simulate-sde, spectrum, probe-moments, probe-power,
bound, align-range. Values come from a key=value config file (--config);
--out and --seed override their keys, and repeated --set key=value overrides
anything else. Exit codes: 0 success, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import parse_config_file, resolve
from .errors import (ConfigError, DomainError, GapViolated, NonFiniteLoss,
                     NonFiniteState, SamlabError, ZeroIterate)
from .runner import (run_align_range, run_bound, run_probe_moments,
                     run_probe_power, run_simulate_sde, run_spectrum,
                     run_train)

RUNNERS = {
    "train": run_train,
    "simulate-sde": run_simulate_sde,
    "spectrum": run_spectrum,
    "probe-moments": run_probe_moments,
    "probe-power": run_probe_power,
    "bound": run_bound,
    "align-range": run_align_range,
}

NUMERIC_ERRORS = (NonFiniteLoss, NonFiniteState, ZeroIterate, GapViolated,
                  DomainError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="samlab",
        description="Sharpness-aware optimization laboratory")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", help="output directory (overrides the out key)")
        p.add_argument("--seed", help="comma-separated seed list override")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
    return parser


def _gather_config(args) -> dict:
    raw = parse_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    if args.out is not None:
        raw["out"] = args.out
    if args.seed is not None:
        raw["seeds"] = args.seed
    return resolve(args.subcommand, raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _gather_config(args)
        path = RUNNERS[args.subcommand](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except SamlabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
