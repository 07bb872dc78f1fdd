"""Exact-policy jam probabilities on the calibrated chain family.

    python scripts/oracle_curves.py

No training: prints theta, H~ and the full-observation jam probability of
random, karaa and lara with the exact policies, for n = 5 and n = 9.
"""

import numpy as np

from jamrl.markov import ChainSpec, OutOfRangeError, build_circulant, calibrate_theta, exact_oracle
from jamrl.strategies import analytic_jam_probability

EPSILON = 1e-3


def main():
    print("n,h_tilde,theta,random,karaa,lara")
    for n in (5, 9):
        for h in np.arange(0.60, 0.951, 0.05):
            try:
                theta = calibrate_theta(n, EPSILON, float(h))
            except OutOfRangeError as exc:
                print(f"# n={n} H~={h:.2f} skipped: {exc}")
                continue
            P = build_circulant(ChainSpec(n, theta, EPSILON))
            o = exact_oracle(P, 0.95)
            vals = [analytic_jam_probability(P, k, o) for k in ("random", "karaa", "lara")]
            print(f"{n},{h:.2f},{theta:.6f}," + ",".join(f"{v:.6f}" for v in vals))


if __name__ == "__main__":
    main()
