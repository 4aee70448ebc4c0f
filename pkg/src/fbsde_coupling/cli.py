"""Command-line entry point: ``fbsde-coupling <kind> --config cfg.json [flags]``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import FbsdeError
from .experiment import EXIT_ERROR, KINDS, load_config, parse_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbsde-coupling",
        description="Coupled-path Monte Carlo experiments for forward-backward SDEs.")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", help="JSON experiment config (defaults are used when omitted)")
        p.add_argument("--seed", type=int, help="override the RNG seed")
        p.add_argument("--paths", type=int, help="override the number of Monte Carlo paths")
        p.add_argument("--steps", type=int, help="override the number of time steps")
        p.add_argument("--out", help="output directory (default results/<kind>)")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded sampling for byte-identical reruns")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "paths": args.paths, "kind": args.kind}
    if args.steps is not None:
        overrides["grid"] = {"n_steps": args.steps}
    if args.deterministic:
        overrides["deterministic"] = True
    try:
        if args.config:
            cfg = load_config(args.config, overrides)
        else:
            cfg = parse_config({"kind": args.kind}, overrides)
        code, result = run_experiment(cfg, args.out)
    except FbsdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    summary = {"kind": cfg.kind, "exit_code": code, "rows": len(result.rows),
               "out": str(args.out or cfg.out or f"results/{cfg.kind}")}
    print(json.dumps(summary))
    return code


if __name__ == "__main__":
    sys.exit(main())
