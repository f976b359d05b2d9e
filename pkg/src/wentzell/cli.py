"""Command line entry point: ``wentzell <subcommand> --config run.yaml``."""
from __future__ import annotations

import argparse
import json
import sys

from .errors import WentzellError
from .experiment import SUBCOMMANDS, load_config, parse_config, run


def build_parser():
    p = argparse.ArgumentParser(prog="wentzell", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", "-c", help="YAML config file (defaults used if omitted)")
        s.add_argument("--out", "-o", help="output directory (overrides output.directory)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--quiet", "-q", action="store_true")
    d = sub.add_parser("defaults", help="print the default config as YAML")
    d.set_defaults(quiet=False)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "defaults":
        print(parse_config({}).to_yaml(), end="")
        return 0
    try:
        cfg = load_config(args.config) if args.config else parse_config({})
        if args.seed is not None:
            cfg = cfg.with_changes(seed=args.seed)
        summary = run(cfg, args.command, args.out)
    except WentzellError as exc:
        print(f"wentzell {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    if not args.quiet:
        print(json.dumps(summary, sort_keys=True, default=repr))
    return 0


if __name__ == "__main__":
    sys.exit(main())
