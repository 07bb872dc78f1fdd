"""Policy-error curves on the n = 9 chain (both networks, both backups).

    python scripts/fig1.py --out results/fig1 --seeds 5 --jobs 4

Writes one CSV per (H~, network, backup, seed) cell, the merged fig1.csv
and fig1.svg, then prints the qualitative checks.
"""

import argparse
import dataclasses
import logging

from jamrl.config import ExperimentConfig
from jamrl.experiments import check_fig1, run_fig1


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/fig1")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--slots", type=int, default=300_000, help="training slots per run")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    base = ExperimentConfig()
    cfg = dataclasses.replace(base, seeds=tuple(range(args.seeds)),
                              agent=dataclasses.replace(base.agent, train_slots=args.slots))
    res = run_fig1(cfg, args.out, args.jobs)
    for name, ok, detail in check_fig1(res.cells):
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


if __name__ == "__main__":
    main()
