#!/usr/bin/env python3
"""Run every named adversary script against one configuration and tabulate
the terminal outcomes: who reconstructed, who was paid, who was refunded,
and how many shares the adversary coalition ever held.

Usage:
    python scripts/adversary_suite.py [--nodes 7] [--threshold 4]
        [--faulty 3] [--providers 3] [--seed 0] [--out out/suite.csv]
"""

import argparse
import csv
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dexo.config import ScenarioConfig
from dexo.netsim import run_scenario, standard_scripts


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--nodes", type=int, default=7)
    parser.add_argument("--threshold", type=int, default=4)
    parser.add_argument("--faulty", type=int, default=3)
    parser.add_argument("--providers", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out/adversary_suite.csv")
    args = parser.parse_args()

    rows = []
    names = sorted(standard_scripts(
        ScenarioConfig(args.nodes, args.threshold, args.faulty, args.providers)
    ))
    for name in names:
        config = ScenarioConfig(
            n_nodes=args.nodes,
            threshold=args.threshold,
            max_faulty=args.faulty,
            providers=args.providers,
            datum_size_bytes=8,
            value_min=0,
            value_max=100,
            adversary=name,
            shared_key=(name == "SHARED_KEY_LEAK"),
            seed=args.seed,
        )
        outcome = run_scenario(config).outcome
        rows.append({
            "script": name,
            "outcome": outcome.finished_reason,
            "data_valid": outcome.reconstruction_valid,
            "paid_sessions": outcome.paid_sessions,
            "paid_out": outcome.paid_out,
            "refunded_to_buyer": outcome.refund_to_buyer,
            "refunded_sessions": " ".join(map(str, outcome.refunded_sessions)),
            "max_coalition_shares": max(outcome.coalition_max.values(), default=0),
            "disputes": len(outcome.disputes),
        })
        print(f"{name:26s} {outcome.finished_reason:28s} "
              f"valid={outcome.reconstruction_valid!s:5s} "
              f"paid_out={outcome.paid_out:5d} refund={outcome.refund_to_buyer:5d} "
              f"coalition<= {max(outcome.coalition_max.values(), default=0)}")

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"\nwrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
