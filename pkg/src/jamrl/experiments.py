"""Seeded single runs and the two figure sweeps, with CSV and plot output.

Every CSV starts with ``#`` comment lines holding the config that produced
it (see :func:`jamrl.config.to_lines`); feeding the file back through
``--config`` reproduces it byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, streams, substream, to_lines
from .env import JammingEnv, jam_fraction
from .markov import (ChainSpec, OutOfRangeError, PolicyOracle, TransitionMatrix, build_circulant,
                     calibrate_theta, exact_oracle, normalized_uncertainty, random_permutation,
                     uncertainty)
from .nets import DivergenceError, gradcheck_lstm, gradcheck_mlp
from .strategies import Strategy, analytic_jam_probability, policy_jam_probability
from .train import TRAINLOG_COLUMNS, Policies, TrainLog, gradcheck_recurrent_td, train

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("h_tilde", "strategy", "network", "backup", "seed",
                 "jam_probability_mc", "jam_probability_analytic", "final_policy_errors")
FIG1_COLUMNS = ("h_tilde", "network", "backup", "seed") + TRAINLOG_COLUMNS
CROSSING_LEVEL = 1.0 / 9.0
CROSSING_TOL = 0.05


def _cell(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_csv(path, header_lines, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_csv(path) -> tuple[list[str], list[dict]]:
    """(header comment lines, data rows as dicts of strings)."""
    header, body = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            (header if line.startswith("#") else body).append(line)
    return [h[1:].strip() for h in header], list(csv.DictReader(body))


# ---------------------------------------------------------------- single runs


def build_chain(cfg: ExperimentConfig) -> TransitionMatrix:
    """Jammer matrix for ``cfg.chain``; raises OutOfRangeError for an
    unreachable H~ target."""
    ch = cfg.chain
    theta = ch.theta if ch.theta is not None else calibrate_theta(ch.n, ch.epsilon, ch.h_tilde)
    perm = random_permutation(ch.n, substream(ch.permutation_seed, "permutation")) if ch.permute else None
    return build_circulant(ChainSpec(ch.n, theta, ch.epsilon, perm))


def point_config(cfg: ExperimentConfig, seed: int, n: int | None = None, h_tilde: float | None = None,
                 network: str | None = None, backup: str | None = None) -> ExperimentConfig:
    """Single-seed config for one sweep cell, agent hyperparameters resolved."""
    chain = cfg.chain
    if n is not None:
        chain = dataclasses.replace(chain, n=n)
    if h_tilde is not None:
        chain = dataclasses.replace(chain, h_tilde=h_tilde, theta=None)
    agent = cfg.agent
    if network is not None:
        agent = dataclasses.replace(agent, architecture=network)
    if backup is not None:
        agent = dataclasses.replace(agent, backup=backup)
    return dataclasses.replace(cfg, chain=chain, agent=agent.resolve(chain.n), seeds=(int(seed),))


def nominal_h_tilde(cfg: ExperimentConfig, P: TransitionMatrix) -> float:
    return cfg.chain.h_tilde if cfg.chain.theta is None else uncertainty(P).normalized


@dataclass
class RunOutcome:
    config: ExperimentConfig
    chain: TransitionMatrix
    oracle: PolicyOracle
    log: TrainLog
    policies: Policies | None
    net: object = None
    rngs: dict | None = None

    @property
    def diverged(self) -> str | None:
        return self.log.diverged


def run_single(cfg: ExperimentConfig) -> RunOutcome:
    """Train one agent for the single seed in ``cfg.seeds``."""
    (seed,) = cfg.seeds
    P = build_chain(cfg)
    agent = cfg.agent.resolve(P.n)
    oracle = exact_oracle(P, agent.gamma)
    rngs = streams(seed)
    env = JammingEnv(P, cfg.signal, rngs, phase="train")
    try:
        res = train(env, agent, oracle, rngs)
    except DivergenceError as exc:
        log.warning("seed %d diverged: %s", seed, exc)
        return RunOutcome(cfg, P, oracle, exc.log or TrainLog(diverged=str(exc)), None)
    return RunOutcome(cfg, P, oracle, res.log, res.policies, res.net, rngs)


def evaluate(outcome: RunOutcome) -> list[tuple]:
    """Implementation-phase jam probabilities of each configured strategy.

    All strategies are scored on one evaluation rollout of the jammer (common
    random numbers). The analytic column is the full-observation value of the
    same learned policy.
    """
    cfg, P, pol = outcome.config, outcome.chain, outcome.policies
    rngs = outcome.rngs
    env = JammingEnv(P, cfg.signal, rngs, phase="eval")
    first = env.s_det
    true, det = env.rollout(cfg.eval_slots)
    h = nominal_h_tilde(cfg, P)
    errors = outcome.log.final_errors
    rows = []
    for kind in cfg.strategies:
        policy = None if kind == "random" else (pol.pi_star if kind == "karaa" else pol.pi_lara)
        strat = Strategy(kind, P.n, policy, rng=rngs["strategy"])
        mc = jam_fraction(first, true, det, strat)
        analytic = policy_jam_probability(P, kind, policy)
        rows.append((h, kind, cfg.agent.architecture, cfg.agent.backup, cfg.seeds[0], mc, analytic, errors))
    return rows


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _status_lines(outcome: RunOutcome) -> list[str]:
    if outcome.diverged:
        return ["status: diverged, " + outcome.diverged.replace("=", ":")]
    return []


def _train_task(cfg: ExperimentConfig) -> RunOutcome:
    t0 = time.perf_counter()
    out = run_single(cfg)
    log.info("trained %s/%s n=%d h=%s seed=%d in %.0fs (final errors %s)", cfg.agent.architecture,
             cfg.agent.backup, cfg.chain.n, cfg.chain.h_tilde, cfg.seeds[0], time.perf_counter() - t0,
             out.log.final_errors)
    out.rngs = None
    return out


def run_train(cfg: ExperimentConfig, out, jobs: int = 1) -> list[RunOutcome]:
    """Train one agent per seed; writes ``train_seed<k>.csv`` and a parameter
    file ``params_seed<k>.txt`` per seed."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [point_config(cfg, s) for s in cfg.seeds]
    outcomes = _map(_train_task, tasks, jobs)
    for o in outcomes:
        s = o.config.seeds[0]
        o.log.write_csv(out / f"train_seed{s}.csv", to_lines(o.config) + _status_lines(o))
        if o.net is not None:
            o.net.save(out / f"params_seed{s}.txt")
    return outcomes


def _eval_task(cfg: ExperimentConfig):
    t0 = time.perf_counter()
    o = run_single(cfg)
    if o.diverged:
        return cfg, [], o.diverged
    rows = evaluate(o)
    log.info("evaluated n=%d h=%s seed=%d in %.0fs: %s", cfg.chain.n, cfg.chain.h_tilde, cfg.seeds[0],
             time.perf_counter() - t0, ", ".join(f"{r[1]}={r[5]:.4f}" for r in rows))
    return cfg, rows, None


def run_eval(cfg: ExperimentConfig, out, jobs: int = 1):
    """Train and evaluate every seed at one chain; writes ``eval.csv``.
    Returns (rows, divergence messages)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    results = _map(_eval_task, [point_config(cfg, s) for s in cfg.seeds], jobs)
    rows = sorted((r for _, rs, _ in results for r in rs), key=lambda r: (r[4], cfg.strategies.index(r[1])))
    header = to_lines(dataclasses.replace(cfg, agent=cfg.agent.resolve(cfg.chain.n)))
    write_csv(out / "eval.csv", header, SWEEP_COLUMNS, rows)
    return rows, [d for _, _, d in results if d]


# ---------------------------------------------------------------- Fig. 1


@dataclass
class Fig1Result:
    cells: dict          # (h, network, backup, seed) -> TrainLog
    files: list


def _fig1_name(h, network, backup, seed) -> str:
    return f"fig1_h{h:g}_{network}_{backup}_seed{seed}.csv"


def run_fig1(cfg: ExperimentConfig, out, jobs: int = 1) -> Fig1Result:
    """Policy-error curves for every (H~, network, backup, seed) cell on the
    chain ``cfg.chain`` (n = 9 by default). One CSV per cell plus ``fig1.csv``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sw = cfg.sweep
    keys = [(h, net, b, s) for h in sw.fig1_h_tilde for net in sw.fig1_networks
            for b in sw.fig1_backups for s in cfg.seeds]
    tasks = [point_config(cfg, s, h_tilde=h, network=net, backup=b) for h, net, b, s in keys]
    outcomes = _map(_train_task, tasks, jobs)
    cells, files, merged = {}, [], []
    for key, o in sorted(zip(keys, outcomes), key=lambda kv: kv[0]):
        cells[key] = o.log
        path = out / _fig1_name(*key)
        o.log.write_csv(path, to_lines(o.config) + _status_lines(o))
        files.append(path)
        merged.extend(key + tuple(row) for row in o.log.rows)
    write_csv(out / "fig1.csv", to_lines(cfg), FIG1_COLUMNS, merged)
    files.append(out / "fig1.csv")
    if sw.plot:
        files += _plot_fig1(cells, sw.fig1_h_tilde, out / "fig1.svg")
    return Fig1Result(cells, files)


def check_fig1(cells: dict) -> list[tuple[str, bool, str]]:
    """Fig. 1 qualitative claims over whichever cells were run; each needs a
    strict majority of seeds."""
    checks = []
    rec = {k[3]: v.final_errors for k, v in cells.items() if k[:3] == (0.85, "recurrent", "mellowmax")}
    if rec:
        good = sum(e is not None and 0 <= e <= 1 for e in rec.values())
        checks.append(("recurrent+mellowmax ends with <= 1 error at H~=0.85", 2 * good > len(rec),
                       f"{good}/{len(rec)} seeds, final errors {dict(sorted(rec.items()))}"))
    mm = {k[3]: v for k, v in cells.items() if k[:3] == (0.9, "mlp", "mellowmax")}
    dq = {k[3]: v for k, v in cells.items() if k[:3] == (0.9, "mlp", "double-q")}
    seeds = sorted(set(mm) & set(dq))
    if seeds:
        pairs = {s: (mm[s].final_errors, dq[s].final_errors) for s in seeds}
        good = sum(not mm[s].diverged and (dq[s].diverged or a <= b) for s, (a, b) in pairs.items())
        checks.append(("mlp: mellowmax final errors <= double-q at H~=0.9", 2 * good > len(seeds),
                       f"{good}/{len(seeds)} seeds, (mellowmax, double-q) {pairs}"))
    return checks


# ---------------------------------------------------------------- Fig. 2


@dataclass
class Fig2Result:
    rows: dict           # n -> list of SweepResult rows
    skipped: list        # (n, h, reason)
    diverged: list       # (n, h, seed, message)
    files: list


def run_fig2(cfg: ExperimentConfig, out, jobs: int = 1) -> Fig2Result:
    """Jam probability against H~ for each strategy at every n in the grid.
    Writes ``fig2_n<n>.csv`` per channel count."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sw = cfg.sweep
    skipped, keys = [], []
    for n in sw.fig2_n:
        for h in sw.fig2_h_tilde:
            try:
                calibrate_theta(n, cfg.chain.epsilon, h)
            except OutOfRangeError as exc:
                log.warning("skipping n=%d H~=%g: %s", n, h, exc)
                skipped.append((n, h, str(exc)))
                continue
            keys.extend((n, h, s) for s in cfg.seeds)
    tasks = [point_config(cfg, s, n=n, h_tilde=h, network=sw.fig2_network, backup=sw.fig2_backup)
             for n, h, s in keys]
    results = _map(_eval_task, tasks, jobs)
    order = {k: i for i, k in enumerate(cfg.strategies)}
    rows, diverged, files = {}, [], []
    for (n, h, s), (_, rs, div) in zip(keys, results):
        rows.setdefault(n, []).extend(rs)
        if div:
            diverged.append((n, h, s, div))
    for n in sw.fig2_n:
        body = sorted(rows.get(n, []), key=lambda r: (r[0], order[r[1]], r[4]))
        rows[n] = body
        path = out / f"fig2_n{n}.csv"
        write_csv(path, to_lines(dataclasses.replace(cfg, sweep=dataclasses.replace(sw, fig2_n=(n,)))),
                  SWEEP_COLUMNS, body)
        files.append(path)
    if sw.plot:
        files += _plot_fig2(rows, out / "fig2.svg")
    return Fig2Result(rows, skipped, diverged, files)


def mean_curves(rows) -> dict:
    """(strategy) -> sorted list of (h, mean MC, mean analytic, seeds)."""
    acc: dict = {}
    for h, kind, _, _, _, mc, an, _ in rows:
        acc.setdefault(kind, {}).setdefault(h, []).append((mc, an))
    return {kind: [(h, float(np.mean([v[0] for v in vals])), float(np.mean([v[1] for v in vals])), len(vals))
                   for h, vals in sorted(by_h.items())] for kind, by_h in acc.items()}


def crossing(points, level: float) -> float | None:
    """Largest H~ at which a curve, read from high H~ downwards, first drops
    below ``level`` (linear interpolation between grid points)."""
    pts = sorted(points, reverse=True)
    for (h_hi, v_hi), (h_lo, v_lo) in zip(pts, pts[1:]):
        if v_hi >= level > v_lo:
            return h_lo + (h_hi - h_lo) * (level - v_lo) / (v_hi - v_lo)
    return None


def oracle_curve(cfg: ExperimentConfig, n: int, kind: str):
    """Full-observation jam probability of the exact policies as a function
    of H~ on the calibrated family (the permutation does not change it)."""
    eps = cfg.chain.epsilon
    gamma = cfg.agent.resolve(n).gamma

    def f(h: float) -> float:
        P = build_circulant(ChainSpec(n, calibrate_theta(n, eps, h), eps))
        return analytic_jam_probability(P, kind, exact_oracle(P, gamma))
    return f


def oracle_crossing(cfg: ExperimentConfig, n: int = 5, level: float = CROSSING_LEVEL, tol: float = 1e-9) -> float:
    """H~ where the exact-policy karaa curve at ``n`` channels meets ``level``,
    found by bisection (the curve increases with H~)."""
    f = oracle_curve(cfg, n, "karaa")
    lo = normalized_uncertainty(n, 0.0, cfg.chain.epsilon) + 1e-6
    hi = 1.0 - 1e-9
    if not f(lo) < level < f(hi):
        raise OutOfRangeError(f"karaa curve at n={n} never crosses {level}", (lo, hi))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < level else (lo, mid)
    return 0.5 * (lo + hi)


def check_fig2(result: Fig2Result, cfg: ExperimentConfig) -> list[tuple[str, bool, str]]:
    """Fig. 2 qualitative claims on seed-averaged Monte-Carlo curves.

    Monotonicity allows, between neighbouring grid points, three combined
    binomial standard errors plus the learning error at both points (the gap
    between the learned and exact policies' full-observation values).
    """
    checks = []
    T = cfg.eval_slots
    for n, rows in sorted(result.rows.items()):
        curves = mean_curves(rows)
        for kind in ("karaa", "lara"):
            if kind not in curves:
                continue
            oracle = oracle_curve(cfg, n, kind)
            pts = curves[kind]
            bad = []
            for (h0, m0, a0, k0), (h1, m1, a1, k1) in zip(pts, pts[1:]):
                sigma = math.sqrt(m0 * (1 - m0) / (T * k0) + m1 * (1 - m1) / (T * k1))
                slack = 3 * sigma + abs(a0 - oracle(h0)) + abs(a1 - oracle(h1))
                if m0 > m1 + slack:
                    bad.append(f"{h0:g}:{m0:.4f} > {h1:g}:{m1:.4f}")
            checks.append((f"n={n} {kind} nonincreasing as H~ decreases", not bad,
                           "; ".join(bad) or f"{len(pts)} points"))
        if "karaa" in curves and "lara" in curves:
            kar = {h: m for h, m, _, _ in curves["karaa"]}
            bad = [f"{h:g}: lara {m:.4f} >= karaa {kar[h]:.4f}" for h, m, _, _ in curves["lara"]
                   if h in kar and not m < kar[h]]
            checks.append((f"n={n} lara strictly below karaa", not bad, "; ".join(bad) or "all points"))
        if "random" in curves:
            bad = []
            for h, m, _, k in curves["random"]:
                sigma = math.sqrt((1 / n) * (1 - 1 / n) / (T * k))
                if abs(m - 1 / n) > 4 * sigma:
                    bad.append(f"{h:g}: {m:.5f}")
            checks.append((f"n={n} random flat at 1/n", not bad, "; ".join(bad) or f"1/{n} within 4 sigma"))
    if 5 in result.rows and "karaa" in mean_curves(result.rows[5]):
        pts = [(h, m) for h, m, _, _ in mean_curves(result.rows[5])["karaa"]]
        measured = crossing(pts, CROSSING_LEVEL)
        ref = oracle_crossing(cfg, 5)
        ok = measured is not None and abs(measured - ref) <= CROSSING_TOL
        shown = "none" if measured is None else f"{measured:.4f}"
        checks.append(("karaa(n=5) crosses 1/9 near the oracle crossing", ok,
                       f"measured {shown}, oracle {ref:.4f}, tolerance {CROSSING_TOL}"))
    return checks


# ---------------------------------------------------------------- gradcheck


def run_gradcheck(seed: int = 0, scales=(0.1, 1.0, 3.0), tol: float = 1e-4, corrupt: bool = False):
    """Finite-difference checks of both networks. ``corrupt`` perturbs the
    analytic gradient (negative control). Returns (passed, report lines)."""
    rng = np.random.default_rng(seed)
    lines, worst = [], 0.0
    suites = (("mlp", gradcheck_mlp), ("recurrent", gradcheck_lstm), ("fused-td", gradcheck_recurrent_td))
    for name, fn in suites:
        for scale in scales:
            err = fn(rng, scale, corrupt=corrupt)
            worst = max(worst, err)
            lines.append(f"{name:9s} scale {scale:<4g} max relative error {err:.3e}")
    passed = worst < tol
    lines.append(f"{'PASS' if passed else 'FAIL'}: worst {worst:.3e} (tolerance {tol:g})")
    return passed, lines


# ---------------------------------------------------------------- plots


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        log.warning("matplotlib not installed; skipping plot")
        return None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "jamrl"
    return plt


def _plot_fig1(cells: dict, hs, path: Path) -> list:
    plt = _pyplot()
    if plt is None:
        return []
    fig, axes = plt.subplots(1, len(hs), figsize=(5 * len(hs), 3.6), squeeze=False)
    combos = sorted({k[1:3] for k in cells})
    for ax, h in zip(axes[0], hs):
        for net, b in combos:
            logs = [v for k, v in cells.items() if k[:3] == (h, net, b) and v.rows]
            if not logs:
                continue
            length = min(len(lg.rows) for lg in logs)
            slots = [r[0] for r in logs[0].rows[:length]]
            errs = np.mean([[r[3] for r in lg.rows[:length]] for lg in logs], axis=0)
            ax.plot(slots, errs, label=f"{net} + {b}")
        ax.set_title(f"H~ = {h:g}")
        ax.set_xlabel("slot")
        ax.set_ylabel("policy elements in error")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return [path]


def _plot_fig2(rows: dict, path: Path) -> list:
    plt = _pyplot()
    if plt is None:
        return []
    fig, ax = plt.subplots(figsize=(6, 4))
    for n, body in sorted(rows.items()):
        for kind, pts in sorted(mean_curves(body).items()):
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{kind}, n={n}")
    ax.set_xlabel("normalized uncertainty H~")
    ax.set_ylabel("probability of being jammed")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return [path]
