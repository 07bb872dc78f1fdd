"""Multi-channel observation model, energy detection and the jammer POMDP."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .markov import TransitionMatrix, sample_path

NOISELESS = math.inf


@dataclass(frozen=True)
class SignalConfig:
    """Observation model settings.

    An SNR of ``math.inf`` means noise-free observations: the jammed channel
    carries a unit-modulus (times sqrt(n0)) symbol and every other channel is
    exactly zero.
    """

    n0: float = 1.0
    snr_range_db: tuple[float, float] = (5.0, 10.0)
    eval_snr_db: float = NOISELESS
    channel_gain: float = 1.0
    detector: str = "argmax"
    threshold: float | None = None

    def __post_init__(self):
        lo, hi = self.snr_range_db
        if lo > hi:
            raise ValueError(f"snr_range_db lower bound exceeds upper: {self.snr_range_db}")
        if self.n0 <= 0:
            raise ValueError("n0 must be positive")
        if self.detector not in ("argmax", "thresholded"):
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.detector == "thresholded" and self.tau <= 0:
            raise ValueError("threshold must be positive")

    @property
    def tau(self) -> float:
        # default: 1% per-channel false alarm under H0, |w|^2 ~ Exp(n0)
        return self.threshold if self.threshold is not None else self.n0 * math.log(100.0)


@dataclass(frozen=True)
class Observation:
    y: np.ndarray
    slot: int


@dataclass(frozen=True)
class Transition:
    s_det: int
    action: int
    reward: int
    s_next: int


def detect(obs, cfg: SignalConfig) -> int:
    """Energy detector. ``obs`` is an Observation or a raw sample vector."""
    y = obs.y if isinstance(obs, Observation) else np.asarray(obs)
    energy = y.real**2 + y.imag**2
    if cfg.detector == "thresholded":
        hits = np.flatnonzero(energy > cfg.tau)
        if hits.size:
            return int(hits[0])
    # np.argmax returns the first maximum, i.e. the lowest channel on ties
    return int(np.argmax(energy))


def detect_batch(y: np.ndarray, cfg: SignalConfig) -> np.ndarray:
    """Row-wise :func:`detect` for a (T, n) block of samples."""
    energy = y.real**2 + y.imag**2
    best = np.argmax(energy, axis=1)
    if cfg.detector == "thresholded":
        above = energy > cfg.tau
        first = np.argmax(above, axis=1)
        best = np.where(above.any(axis=1), first, best)
    return best


def synthesize(states: np.ndarray, n: int, snr_db, cfg: SignalConfig, rng: np.random.Generator) -> np.ndarray:
    """Received samples y for a block of slots, one row per slot.

    ``snr_db`` is a scalar or one value per slot. Draw order per block: jammer
    phases, then noise (real parts, imaginary parts).
    """
    states = np.asarray(states)
    T = states.shape[0]
    snr_db = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (T,))
    phase = rng.uniform(0.0, 2.0 * np.pi, T)
    noiseless = np.isinf(snr_db)
    power = np.where(noiseless, cfg.n0, cfg.n0 * 10.0 ** (np.where(noiseless, 0.0, snr_db) / 10.0))
    x = cfg.channel_gain * np.sqrt(power) * np.exp(1j * phase)
    if np.all(noiseless):
        y = np.zeros((T, n), dtype=np.complex128)
    else:
        scale = math.sqrt(cfg.n0 / 2.0)
        w = rng.standard_normal((2, T, n)) * scale
        y = w[0] + 1j * w[1]
        y[noiseless] = 0.0
    y[np.arange(T), states] += x
    return y


class JammingEnv:
    """The radar's view of a Markov jammer.

    ``phase="train"`` draws each slot's SNR uniformly (in dB) from
    ``cfg.snr_range_db``; any other phase uses ``cfg.eval_snr_db``.
    Streams: ``chain`` drives the jammer, ``noise`` the samples, ``snr`` the
    per-slot SNR.

    The jammer ignores the radar, so slots are synthesised ahead of time in
    blocks of ``block`` slots. Draws depend only on the block index, so
    :meth:`step` and :meth:`rollout` see the same trajectory for a seed.
    """

    def __init__(self, chain: TransitionMatrix, cfg: SignalConfig, streams: dict,
                 phase: str = "train", block: int = 4096):
        self.chain = chain
        self.cfg = cfg
        self.phase = phase
        self.block = int(block)
        self.rng_chain = streams["chain"]
        self.rng_noise = streams["noise"]
        self.rng_snr = streams["snr"]
        self.n = chain.n
        self._carry = int(self.rng_chain.integers(self.n))
        self._start = 0
        self._fill(first=True)
        self.slot = 0
        self._sync()
        self.last_jammed = False

    def _fill(self, first: bool = False) -> None:
        if first:
            rest = sample_path(self.chain, self._carry, self.block - 1, self.rng_chain)
            true = np.concatenate(([self._carry], rest))
        else:
            self._start += self.block
            true = sample_path(self.chain, self._carry, self.block, self.rng_chain)
        self._carry = int(true[-1])
        if self.phase == "train":
            lo, hi = self.cfg.snr_range_db
            # a degenerate range (e.g. inf, inf for noiseless training) draws nothing
            snr = np.full(self.block, lo) if lo == hi else self.rng_snr.uniform(lo, hi, self.block)
        else:
            snr = np.full(self.block, self.cfg.eval_snr_db)
        self._true = true
        self._snr = snr
        self._y = synthesize(true, self.n, snr, self.cfg, self.rng_noise)
        self._det = detect_batch(self._y, self.cfg)

    def _sync(self) -> None:
        i = self.slot - self._start
        if i >= self.block:
            self._fill()
            i = self.slot - self._start
        self.true_state = int(self._true[i])
        self.s_det = int(self._det[i])

    def emit_observation(self) -> Observation:
        """Samples y_k received in the current slot."""
        return Observation(self._y[self.slot - self._start].copy(), self.slot)

    @property
    def slot_snr_db(self) -> float:
        return float(self._snr[self.slot - self._start])

    def step(self, action: int) -> Transition:
        """Advance one slot. ``action`` is the radar's guess of the next channel.

        The reward is 1 when the guess matches the channel detected in the
        new slot; ``last_jammed`` records the ground-truth match.
        """
        if not 0 <= action < self.n:
            raise ValueError(f"action {action} outside 0..{self.n - 1}")
        prev = self.s_det
        self.slot += 1
        self._sync()
        self.last_jammed = action == self.true_state
        return Transition(prev, int(action), int(action == self.s_det), self.s_det)

    def rollout(self, slots: int):
        """The next ``slots`` slots as (true, detected) arrays, advancing the env."""
        true = np.empty(slots, dtype=np.int64)
        det = np.empty(slots, dtype=np.int64)
        done = 0
        while done < slots:
            i = self.slot + 1 - self._start
            if i >= self.block:
                self._fill()
                i = self.slot + 1 - self._start
            take = min(slots - done, self.block - i)
            true[done:done + take] = self._true[i:i + take]
            det[done:done + take] = self._det[i:i + take]
            done += take
            self.slot += take
        self._sync()
        return true, det


def jam_fraction(first: int, true: np.ndarray, det: np.ndarray, policy) -> float:
    """Jam rate of ``policy`` on a recorded rollout.

    Slot k transmits on policy(detection of slot k - 1), where ``first`` is
    the detection just before the rollout. ``policy`` either exposes
    ``select_actions(detected_array)`` (vectorised) or is a plain callable of
    one detected state.
    """
    prev = np.concatenate(([first], det[:-1]))
    if hasattr(policy, "select_actions"):
        actions = policy.select_actions(prev)
    else:
        actions = np.array([policy(int(s)) for s in prev])
    return float(np.mean(actions == true))


def jam_probability_mc(env: JammingEnv, policy, slots: int) -> float:
    """Fraction of ``slots`` operation-step slots in which the radar is jammed.

    Initial step: the radar senses the current slot and detects s~_t. Then in
    each of the following ``slots`` slots it transmits on policy(previous
    detection) and keeps sensing.
    """
    if slots < 1:
        raise ValueError("need at least one slot")
    first = env.s_det
    true, det = env.rollout(slots)
    return jam_fraction(first, true, det, policy)
