"""Implementation-phase hopping strategies and their full-observation jam odds."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .markov import PolicyOracle, TransitionMatrix, stationary_distribution

KINDS = ("random", "karaa", "lara")


@dataclass
class Strategy:
    """Maps the detected channel of slot t to a transmit channel for t + 1.

    ``random`` ignores the state. ``karaa`` hops uniformly over every channel
    except the jammer's most likely next one, ``policy[s]``. ``lara`` always
    takes ``policy[s]``, the jammer's least likely next channel.
    """

    kind: str
    n: int
    policy: tuple[int, ...] | None = None
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind != "random":
            if self.policy is None or len(self.policy) != self.n:
                raise ValueError(f"{self.kind} needs a policy over all {self.n} states")
            if any(not 0 <= a < self.n for a in self.policy):
                raise ValueError("policy maps a state outside the channel set")
            self._table = np.asarray(self.policy, dtype=np.int64)
        if self.kind == "karaa" and len(set(self.policy)) != self.n:
            warnings.warn(
                "KARAA policy is not injective; excluding each state's own argmax anyway",
                stacklevel=3,
            )
        if self.kind != "lara" and self.rng is None:
            self.rng = np.random.default_rng()

    def select_action(self, s: int) -> int:
        return int(self.select_actions(np.array([s]))[0])

    def select_actions(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        if self.kind == "random":
            return self.rng.integers(self.n, size=states.shape)
        if self.kind == "lara":
            return self._table[states]
        avoid = self._table[states]
        u = self.rng.integers(self.n - 1, size=states.shape)
        return u + (u >= avoid)

    __call__ = select_action


def policy_jam_probability(P: TransitionMatrix, kind: str, policy=None) -> float:
    """Long-run jam probability of a strategy under perfect detection.

    ``policy`` is the per-state channel the strategy avoids (karaa) or takes
    (lara); it may be a learned policy rather than the exact one.
    """
    n = P.n
    if kind == "random":
        return 1.0 / n
    if kind not in KINDS:
        raise ValueError(f"unknown strategy {kind!r}")
    psi = stationary_distribution(P.p)
    picked = P.p[np.arange(n), np.asarray(policy)]
    hit = (1.0 - picked) / (n - 1) if kind == "karaa" else picked
    return float(psi @ hit)


def analytic_jam_probability(P: TransitionMatrix, kind: str, oracle: PolicyOracle | None = None) -> float:
    """Jam probability with perfect detection and the exact oracle policies."""
    if kind == "random":
        return 1.0 / P.n
    if oracle is None:
        raise ValueError(f"{kind} needs the exact policy oracle")
    return policy_jam_probability(P, kind, oracle.pi_star if kind == "karaa" else oracle.pi_lara)
