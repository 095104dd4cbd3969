"""Command line entry point: ``run`` and ``compare`` subcommands."""
from __future__ import annotations

import argparse
import sys

from .experiment import (
    EXIT_INVALID_CONFIG,
    SchemaMismatchError,
    compare,
    load_config,
    parse_config,
    run,
)
from .simnet import InvalidConfigError

EXIT_IO_ERROR = 74
EXIT_SCHEMA_MISMATCH = 65


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resilient-stencil", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment and write per-iteration metrics")
    r.add_argument("--config", help="key = value config file")
    r.add_argument("--output", help="metrics CSV path (overrides the config)")
    r.add_argument("--strategy", choices=["default", "mirror", "bridge", "interpolate"])
    r.add_argument("--fault", action="append", default=[], metavar="RANK@ITER")
    r.add_argument("--seed", type=int)
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any other config key")

    c = sub.add_parser("compare", help="report where a run diverges from a reference run")
    c.add_argument("run_csv")
    c.add_argument("--reference", required=True)
    c.add_argument("--tolerance", type=float, default=1e-9)
    return p


def _run(args) -> int:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.strategy:
        overrides["strategy"] = args.strategy
    if args.fault:
        overrides["faults"] = ",".join(args.fault)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.output:
        overrides["output"] = args.output
    config = load_config(args.config, overrides) if args.config else parse_config("", overrides)
    result = run(config)
    last = result.records[-1].iteration if result.records else "-"
    print(f"{result.summary} after iteration {last}")
    return result.exit_code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(args)
        report = compare(args.run_csv, args.reference, args.tolerance)
        print("\n".join(report.lines()))
        return 1 if report.diverged else 0
    except InvalidConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except SchemaMismatchError as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return EXIT_SCHEMA_MISMATCH
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
