"""Command-line entry point (``paneleval``)."""

from __future__ import annotations

import argparse
import sys

from .pipeline import (EXIT_ESTIMATION, EXIT_OK, EXIT_VALIDATION, AnalysisError, ConfigError, execute,
                       load_config, simulate)

COMMANDS = {
    "simulate": "draw a synthetic panel from a DGP config",
    "build-index": "load inputs, derive variables and build the composite indices",
    "did": "baseline two-way FE DID (plus trim, alternative index and group columns if configured)",
    "event-study": "relative-time dummies around adoption",
    "psm-did": "propensity-score matching followed by DID on the matched sample",
    "placebo": "randomization placebo test",
    "mediate": "mediation analysis",
    "run": "every analysis listed in the config",
}


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="paneleval", description="Panel policy-evaluation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=_u64, help="override the config seed")
        p.add_argument("--out", help="output directory")
        if name != "simulate":
            p.add_argument("--se", choices=("classical", "robust", "cluster"), help="standard-error type")
            p.add_argument("--jobs", type=_positive, help="worker threads for the placebo test")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            if not args.out:
                raise ConfigError("simulate needs --out")
            manifest = simulate(args.config, args.out, args.seed)
        else:
            cfg = load_config(args.config, seed=args.seed, se=args.se, out=args.out, jobs=args.jobs)
            manifest = execute(cfg, args.command)
    except ConfigError as exc:
        print(f"paneleval {args.command}: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AnalysisError as exc:
        print(f"paneleval {args.command}: estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    print(f"wrote {len(manifest['artifacts'])} artifacts and manifest.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
