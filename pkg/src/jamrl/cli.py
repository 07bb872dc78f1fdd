"""Command-line driver: ``jamrl <command> [--config PATH] [--seed S] [--out DIR] [--full] [--jobs K]``.

Exit codes: 0 success, 1 invalid config, 2 training divergence,
3 acceptance-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (build_chain, check_fig1, check_fig2, run_eval, run_fig1, run_fig2,
                          run_gradcheck, run_train)
from .markov import InvalidSpecError, OutOfRangeError, calibrate_theta, normalized_uncertainty, uncertainty

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 1, 2, 3

COMMANDS = ("chain", "calibrate", "train", "eval", "fig1", "fig2", "gradcheck")
# seeds per sweep point at desk scale and with --full
DEFAULT_SEEDS = {"fig1": 5, "fig2": 3}
FULL_SEEDS = 10


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jamrl", description="Learning anti-jamming hopping policies.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value file, or any CSV this tool wrote")
    p.add_argument("--seed", type=int, help="master seed (first seed of a sweep)")
    p.add_argument("--out", help="output directory (default: config 'out', i.e. results)")
    p.add_argument("--full", action="store_true", help=f"{FULL_SEEDS} seeds per sweep point")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--quiet", action="store_true", help="only warnings on stderr")
    return p


def resolve_config(args) -> ExperimentConfig:
    """Defaults, then --full, then the config file, then --seed and --out."""
    count = DEFAULT_SEEDS.get(args.command, 1)
    if args.full and args.command in DEFAULT_SEEDS:
        count = FULL_SEEDS
    cfg = ExperimentConfig(seeds=tuple(range(count)))
    if args.config:
        try:
            cfg = load_config(args.config, cfg)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    if args.seed is not None:
        first = cfg.seeds[0]
        cfg = dataclasses.replace(cfg, seeds=tuple(args.seed + s - first for s in cfg.seeds))
    if args.out:
        cfg = dataclasses.replace(cfg, out=args.out)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    return cfg


def _print_checks(checks) -> bool:
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all(ok for _, ok, _ in checks)


def cmd_chain(cfg, args) -> int:
    P = build_chain(cfg)
    rep = uncertainty(P)
    np.set_printoptions(precision=6, suppress=True, linewidth=120)
    print(f"n = {P.n}, epsilon = {cfg.chain.epsilon}, kappa = {P.kappa}")
    print("transition matrix:")
    print(P.p)
    print("state entropies (bits):", np.round(rep.state_entropies, 6))
    print("stationary distribution:", np.round(rep.stationary, 6))
    print(f"chain entropy H = {rep.chain_entropy:.6f} bits, lambda_max = {rep.lambda_max:g}, "
          f"normalized H~ = {rep.normalized:.6f}")
    return EXIT_OK


def cmd_calibrate(cfg, args) -> int:
    ch = cfg.chain
    lo = normalized_uncertainty(ch.n, 0.0, ch.epsilon)
    print(f"n = {ch.n}, epsilon = {ch.epsilon}: achievable H~ in ({lo:.6f}, 1)")
    targets = (ch.h_tilde,) if ch.h_tilde is not None else cfg.sweep.fig2_h_tilde
    for h in targets:
        theta = calibrate_theta(ch.n, ch.epsilon, h)
        print(f"H~ = {h:g}: theta = {theta:.9f} (H~ check {normalized_uncertainty(ch.n, theta, ch.epsilon):.9f})")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    outcomes = run_train(cfg, cfg.out, args.jobs)
    for o in outcomes:
        state = f"diverged: {o.diverged}" if o.diverged else f"final errors {o.log.final_errors}"
        print(f"seed {o.config.seeds[0]}: {state}; policy {o.policies.pi_star if o.policies else None}")
    return EXIT_DIVERGED if any(o.diverged for o in outcomes) else EXIT_OK


def cmd_eval(cfg, args) -> int:
    rows, diverged = run_eval(cfg, cfg.out, args.jobs)
    for r in rows:
        print(f"seed {r[4]} {r[1]:6s} mc {r[5]:.5f} analytic {r[6]:.5f} errors {r[7]}")
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_fig1(cfg, args) -> int:
    res = run_fig1(cfg, cfg.out, args.jobs)
    ok = _print_checks(check_fig1(res.cells))
    if any(log.diverged for log in res.cells.values()):
        return EXIT_DIVERGED
    return EXIT_OK if ok else EXIT_CHECK


def cmd_fig2(cfg, args) -> int:
    res = run_fig2(cfg, cfg.out, args.jobs)
    for n, h, reason in res.skipped:
        print(f"skipped n={n} H~={h:g}: {reason}")
    ok = _print_checks(check_fig2(res, cfg))
    if res.diverged:
        return EXIT_DIVERGED
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gradcheck(cfg, args) -> int:
    passed, lines = run_gradcheck(seed=cfg.seeds[0])
    print("\n".join(lines))
    return EXIT_OK if passed else EXIT_CHECK


HANDLERS = {"chain": cmd_chain, "calibrate": cmd_calibrate, "train": cmd_train, "eval": cmd_eval,
            "fig1": cmd_fig1, "fig2": cmd_fig2, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg, args)
    except (ConfigError, OutOfRangeError, InvalidSpecError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
