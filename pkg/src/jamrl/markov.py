"""Jammer dynamics: circulant transition matrices, entropy, calibration, sampling.

Channels are 0-based throughout: state ``i`` is the jammer sitting on
channel ``i``.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

ROW_SUM_TOL = 1e-12


class InvalidSpecError(ValueError):
    pass


class InvalidMatrixError(ValueError):
    pass


class OutOfRangeError(ValueError):
    def __init__(self, message: str, achievable: tuple[float, float]):
        super().__init__(message)
        self.achievable = achievable


@dataclass(frozen=True)
class ChainSpec:
    n: int
    theta: float
    epsilon: float = 1e-3
    permutation: tuple[int, ...] | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.n < 1 or self.n % 2 == 0:
            raise InvalidSpecError(f"channel count must be odd and positive, got n={self.n}")
        if not 0.0 <= self.theta < 1.0:
            raise InvalidSpecError(f"theta must lie in [0, 1), got {self.theta}")
        if self.epsilon <= 0.0 or self.n * self.epsilon >= 1.0:
            raise InvalidSpecError(
                f"need 0 < n*epsilon < 1, got n*epsilon={self.n * self.epsilon}"
            )
        if self.permutation is not None:
            if sorted(self.permutation) != list(range(self.n)):
                raise InvalidSpecError("permutation is not a bijection on the channels")


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic jammer dynamics with strictly positive entries."""

    p: np.ndarray
    labels: tuple[int, ...] = ()
    kappa: float | None = None

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] == 0:
            raise InvalidMatrixError(f"expected a square matrix, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p <= 0.0):
            raise InvalidMatrixError("every transition probability must be strictly positive")
        sums = np.array([math.fsum(row) for row in p])
        if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            raise InvalidMatrixError(
                f"rows must sum to 1 (worst deviation {np.max(np.abs(sums - 1.0)):.3e})"
            )
        labels = tuple(self.labels) if self.labels else tuple(range(p.shape[0]))
        if len(labels) != p.shape[0] or len(set(labels)) != len(labels):
            raise InvalidMatrixError("state labels must be distinct, one per state")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.p, axis=1)
        c[:, -1] = 1.0
        return c

    def permuted(self, sigma) -> "TransitionMatrix":
        """Row ``i`` of the result is row ``sigma[i]`` of this matrix."""
        sigma = np.asarray(sigma)
        return TransitionMatrix(self.p[sigma], self.labels, self.kappa)


def circulant_row(n: int, theta: float, epsilon: float) -> tuple[np.ndarray, float]:
    """First row of the decaying circulant and its normaliser kappa."""
    rho = (n - 1) // 2
    decay = 1.0 + 2.0 * math.fsum(theta**d for d in range(1, rho + 1))
    kappa = (1.0 - n * epsilon) / decay
    dist = np.minimum(np.arange(n), n - np.arange(n))
    row = kappa * theta**dist + epsilon
    # theta**0 must be 1 even when theta == 0
    row[0] = kappa + epsilon
    return row, kappa


def build_circulant(spec: ChainSpec) -> TransitionMatrix:
    spec.validate()
    row, kappa = circulant_row(spec.n, spec.theta, spec.epsilon)
    p = np.array([np.roll(row, i) for i in range(spec.n)])
    if spec.permutation is not None:
        p = p[np.asarray(spec.permutation)]
    return TransitionMatrix(p, kappa=kappa)


def random_permutation(n: int, rng: np.random.Generator) -> tuple[int, ...]:
    return tuple(int(i) for i in rng.permutation(n))


@dataclass(frozen=True)
class UncertaintyReport:
    state_entropies: np.ndarray
    stationary: np.ndarray
    chain_entropy: float
    lambda_max: float
    normalized: float


def stationary_distribution(p: np.ndarray, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Power iteration from the uniform vector.

    Each component is an exactly rounded sum (``math.fsum``), so the result
    does not depend on the order in which rows are stored. That makes row
    permutations of a doubly stochastic matrix give bit-identical output.
    """
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    psi = np.full(n, 1.0 / n)
    cols = p.T
    for _ in range(max_iter):
        nxt = np.array([math.fsum(psi * cols[j]) for j in range(n)])
        nxt /= math.fsum(nxt)
        delta = math.fsum(np.abs(nxt - psi))
        psi = nxt
        if delta < tol:
            break
    return psi


def spectral_radius_of_connections(p: np.ndarray) -> float:
    conn = (np.asarray(p) > 0).astype(np.float64)
    if np.all(conn == 1.0):
        # all-ones matrix: Perron root is exactly n
        return float(conn.shape[0])
    return float(np.max(np.abs(np.linalg.eigvals(conn))))


def uncertainty(P: TransitionMatrix) -> UncertaintyReport:
    if not isinstance(P, TransitionMatrix):
        P = TransitionMatrix(P)
    p = P.p
    h = np.array([-math.fsum(row * np.log2(row)) for row in p])
    psi = stationary_distribution(p)
    chain = math.fsum(psi * h)
    lam = spectral_radius_of_connections(p)
    normalized = chain / math.log2(lam) if lam > 1.0 else 0.0
    return UncertaintyReport(h, psi, chain, lam, normalized)


def normalized_uncertainty(n: int, theta: float, epsilon: float = 1e-3) -> float:
    """H~ of the unpermuted circulant; permutations leave it unchanged."""
    return uncertainty(build_circulant(ChainSpec(n, theta, epsilon))).normalized


def calibrate_theta(
    n: int, epsilon: float, target_h: float, tol: float = 1e-6, max_iter: int = 200
) -> float:
    """Bisect theta in [0, 1) until the circulant's H~ is within ``tol`` of target."""
    lo, hi = 0.0, 1.0
    h_lo = normalized_uncertainty(n, lo, epsilon)
    # theta -> 1 is the uniform chain
    h_hi = 1.0
    if not h_lo < target_h < h_hi:
        raise OutOfRangeError(
            f"target H~={target_h} outside achievable interval ({h_lo:.6f}, {h_hi})",
            (h_lo, h_hi),
        )
    mid = 0.5
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        h = normalized_uncertainty(n, mid, epsilon)
        if abs(h - target_h) <= tol:
            return mid
        if h < target_h:
            lo = mid
        else:
            hi = mid
    raise OutOfRangeError(
        f"bisection did not reach tol={tol} in {max_iter} iterations (theta={mid})",
        (h_lo, h_hi),
    )


def sample_next(P: TransitionMatrix, state: int, rng: np.random.Generator) -> int:
    return int(np.searchsorted(P.cdf[state], rng.random(), side="right"))


def sample_path(P: TransitionMatrix, start: int, length: int, rng: np.random.Generator) -> np.ndarray:
    """States s_1..s_length following ``start``; consumes ``length`` uniforms."""
    u = rng.random(length)
    cdf = P.cdf.tolist()
    out = np.empty(length, dtype=np.int64)
    s = start
    for t in range(length):
        s = bisect_right(cdf[s], u[t])
        out[t] = s
    return out


@dataclass(frozen=True)
class PolicyOracle:
    pi_star: tuple[int, ...]
    pi_lara_set: tuple[frozenset, ...]
    q_star: np.ndarray
    gamma: float
    pi_lara: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.pi_lara:
            object.__setattr__(self, "pi_lara", tuple(min(s) for s in self.pi_lara_set))


def _argmin_set(row: np.ndarray, rtol: float = 1e-12) -> frozenset:
    lo = row.min()
    return frozenset(int(i) for i in np.flatnonzero(row <= lo + rtol * max(1.0, abs(lo))))


def exact_oracle(P: TransitionMatrix, gamma: float, tol: float = 1e-13, max_iter: int = 100_000) -> PolicyOracle:
    """Value iteration with reward(s, a) = p[s, a]: the chance that predicting
    channel ``a`` from state ``s`` hits the jammer's next channel."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    p = P.p
    q = np.zeros_like(p)
    for _ in range(max_iter):
        v = q.max(axis=1)
        q_new = p + gamma * (p @ v)[:, None]
        if np.max(np.abs(q_new - q)) < tol:
            q = q_new
            break
        q = q_new
    pi_star = tuple(int(a) for a in np.argmax(q, axis=1))
    lara = tuple(_argmin_set(row) for row in q)
    return PolicyOracle(pi_star, lara, q, gamma)
