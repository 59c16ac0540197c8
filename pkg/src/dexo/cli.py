"""Command-line front door: run scenarios, sweep parameters, compare costs,
and replay traces. Exit codes: 0 success, 2 config error, 3 invariant
violation or replay mismatch.
"""

from __future__ import annotations

import argparse
import sys

from . import harness


def _parse_values(text: str) -> list[int]:
    values = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            values.extend(range(int(lo), int(hi) + 1))
        elif part:
            values.append(int(part))
    return values


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dexo",
        description="Deterministic simulator of a secret-shared, fair-exchange "
        "IoT data market with a calibrated gas model.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one scenario config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--usd", action="store_true",
                       help="add USD figures at the reference price snapshot")

    p_sweep = sub.add_parser("sweep", help="run a one-axis parameter sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--axis", required=True,
                         choices=harness.SWEEP_AXES)
    p_sweep.add_argument("--values", required=True,
                         help="comma list, ranges allowed: 1,5,20 or 1..50")
    p_sweep.add_argument("--out", default="out/sweep.csv")
    p_sweep.add_argument("--parallel", action="store_true")
    p_sweep.add_argument("--usd", action="store_true")

    p_cmp = sub.add_parser("compare", help="append per-call oracle costs to a report")
    p_cmp.add_argument("report")
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--usd", action="store_true")

    p_rep = sub.add_parser("replay", help="re-execute a trace and compare")
    p_rep.add_argument("trace")

    p_ex = sub.add_parser("example-config", help="write a starter config file")
    p_ex.add_argument("path")

    args = parser.parse_args(argv)
    if args.verb == "run":
        return harness.run(args.config, out_dir=args.out, usd=args.usd)
    if args.verb == "sweep":
        return harness.run_sweep(
            args.config,
            axis=args.axis,
            values=_parse_values(args.values),
            out_path=args.out,
            parallel=args.parallel,
            usd=args.usd,
        )
    if args.verb == "compare":
        return harness.run_compare(args.report, out_path=args.out, usd=args.usd)
    if args.verb == "replay":
        return harness.run_replay(args.trace)
    if args.verb == "example-config":
        harness.write_example_config(args.path)
        print(f"wrote {args.path}")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
