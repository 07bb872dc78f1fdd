"""Jam probability against normalized uncertainty for random, karaa and
lara at n = 5 and n = 9 (recurrent agent, mellowmax backup).

    python scripts/fig2.py --out results/fig2 --seeds 3 --jobs 4

Writes fig2_n5.csv, fig2_n9.csv and fig2.svg, then prints the qualitative
checks together with the exact-policy reference crossing.
"""

import argparse
import dataclasses
import logging

from jamrl.config import ExperimentConfig
from jamrl.experiments import check_fig2, oracle_crossing, run_fig2


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/fig2")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--slots", type=int, default=300_000, help="training slots per run")
    ap.add_argument("--eval-slots", type=int, default=1_000_000)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    base = ExperimentConfig()
    cfg = dataclasses.replace(base, seeds=tuple(range(args.seeds)), eval_slots=args.eval_slots,
                              agent=dataclasses.replace(base.agent, train_slots=args.slots))
    res = run_fig2(cfg, args.out, args.jobs)
    for n, h, reason in res.skipped:
        print(f"skipped n={n} H~={h:g}: {reason}")
    for name, ok, detail in check_fig2(res, cfg):
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    print(f"exact-policy karaa(n=5) crossing of 1/9 at H~ = {oracle_crossing(cfg, 5):.4f}")


if __name__ == "__main__":
    main()
