import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamrl.config import streams
from jamrl.env import (NOISELESS, JammingEnv, Observation, SignalConfig, detect, detect_batch,
                       jam_probability_mc, synthesize)
from jamrl.markov import ChainSpec, TransitionMatrix, build_circulant, exact_oracle
from jamrl.strategies import Strategy


def p_correct(snr_db, n):
    """Argmax detection accuracy with n0 = 1: integrate the Rician energy of the
    jammed channel against the Exp(1) maximum of the other n - 1 channels."""
    s = 10.0 ** (snr_db / 10.0)
    u = np.linspace(0.0, s + 40.0 * math.sqrt(s + 1.0) + 40.0, 40_001)
    f = np.exp(-(u + s)) * np.i0(2.0 * np.sqrt(s * u))
    return min(1.0, float(np.trapezoid(f * (1.0 - np.exp(-u)) ** (n - 1), u)))


def eig_stationary(p):
    w, v = np.linalg.eig(p.T)
    vec = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return vec / vec.sum()


def make_env(P, cfg=SignalConfig(), seed=0, phase="train"):
    return JammingEnv(P, cfg, streams(seed, "chain", "noise", "snr"), phase=phase)


def test_mean_energy_at_10db():
    rng = np.random.default_rng(0)
    T = 100_000
    y = synthesize(np.zeros(T, dtype=np.int64), 5, 10.0, SignalConfig(), rng)
    e = np.abs(y) ** 2
    # jammed channel: |x|^2 + |w|^2 has mean 11 and variance 4*10/2 + 1
    assert abs(e[:, 0].mean() - 11.0) <= 3 * math.sqrt(21.0 / T)
    for k in range(1, 5):
        assert abs(e[:, k].mean() - 1.0) <= 3 * math.sqrt(1.0 / T)


def test_noiseless_samples_are_exact():
    y = synthesize(np.array([2, 0, 4]), 5, NOISELESS, SignalConfig(), np.random.default_rng(1))
    np.testing.assert_allclose(np.abs(y), np.eye(5)[[2, 0, 4]], atol=1e-15)


def test_argmax_detector_and_ties():
    cfg = SignalConfig()
    assert detect(np.array([0.1, 2.0, 1j, -0.3]), cfg) == 1
    assert detect(np.array([1.0, 1j, -1.0]), cfg) == 0
    assert detect(Observation(np.array([0.0, 3.0, 3.0]), 0), cfg) == 1
    assert detect(np.zeros(4), cfg) == 0


def test_thresholded_detector_takes_lowest_crossing():
    cfg = SignalConfig(detector="thresholded", threshold=2.0)
    assert detect(np.array([1.0, 1.5, 3.0, 1.2]), cfg) == 1
    assert detect(np.array([1.0, 1.1, 0.5]), cfg) == 1
    y = np.array([[1.0, 1.5, 3.0, 1.2], [1.0, 1.1, 0.5, 0.0]])
    np.testing.assert_array_equal(detect_batch(y, cfg), [1, 1])


def test_detect_batch_matches_detect():
    rng = np.random.default_rng(2)
    y = synthesize(rng.integers(9, size=500), 9, 0.0, SignalConfig(), rng)
    for cfg in (SignalConfig(), SignalConfig(detector="thresholded")):
        np.testing.assert_array_equal(detect_batch(y, cfg), [detect(row, cfg) for row in y])


@pytest.mark.parametrize("n", [5, 9])
def test_detection_accuracy_monotone_and_semi_analytic(n):
    rng = np.random.default_rng(n)
    T = 200_000
    acc = []
    for snr in (0.0, 5.0, 10.0, 20.0):
        states = rng.integers(n, size=T)
        det = detect_batch(synthesize(states, n, snr, SignalConfig(), rng), SignalConfig())
        a = float(np.mean(det == states))
        pc = p_correct(snr, n)
        assert abs(a - pc) <= 4 * math.sqrt(pc * (1 - pc) / T) + 1e-4
        acc.append(a)
    assert all(b >= a for a, b in zip(acc, acc[1:]))


def test_step_rewards_follow_detection():
    P = build_circulant(ChainSpec(5, 0.5))
    env = make_env(P)
    rng = np.random.default_rng(3)
    for _ in range(2000):
        prev = env.s_det
        a = int(rng.integers(5))
        tr = env.step(a)
        assert tr.s_det == prev and tr.s_next == env.s_det
        assert tr.reward == int(a == env.s_det)
        assert env.last_jammed == (a == env.true_state)
    with pytest.raises(ValueError):
        env.step(5)
    with pytest.raises(ValueError):
        env.step(-1)


def test_near_deterministic_chain_rewards_staying():
    eps = 1e-3
    P = build_circulant(ChainSpec(5, 1e-12, eps))
    env = make_env(P, SignalConfig(snr_range_db=(NOISELESS, NOISELESS)))
    T = 50_000
    total = sum(env.step(env.s_det).reward for _ in range(T))
    p = 1 - 4 * eps
    assert abs(total / T - p) <= 4 * math.sqrt(p * (1 - p) / T)


def test_constant_guess_reward_semi_analytic():
    # a non-doubly-stochastic chain so the stationary law is not uniform
    P = TransitionMatrix(np.array([[0.7, 0.2, 0.1], [0.3, 0.3, 0.4], [0.5, 0.1, 0.4]]))
    n, j = 3, 1
    psi = eig_stationary(P.p)
    snrs = np.linspace(5.0, 10.0, 401)
    pc = float(np.mean([p_correct(s, n) for s in snrs]))
    expected = sum(psi[z] * (pc if z == j else (1 - pc) / (n - 1)) for z in range(n))
    env = make_env(P, seed=4)
    T = 100_000
    hits = sum(env.step(j).reward for _ in range(T))
    assert abs(hits / T - expected) <= 4 * math.sqrt(expected * (1 - expected) / T)


def test_training_snr_uniform_in_db():
    env = make_env(build_circulant(ChainSpec(5, 0.5)))
    snrs = []
    for _ in range(20_000):
        snrs.append(env.slot_snr_db)
        env.step(0)
    snrs = np.array(snrs)
    assert snrs.min() >= 5.0 and snrs.max() <= 10.0
    assert abs(snrs.mean() - 7.5) <= 4 * (5 / math.sqrt(12)) / math.sqrt(snrs.size)


def test_env_is_deterministic_and_step_matches_rollout():
    P = build_circulant(ChainSpec(9, 0.6))
    a, b = make_env(P, seed=7), make_env(P, seed=7)
    true, det = a.rollout(10_000)
    got_true, got_det = [], []
    for _ in range(10_000):
        b.step(0)
        got_true.append(b.true_state)
        got_det.append(b.s_det)
    np.testing.assert_array_equal(true, got_true)
    np.testing.assert_array_equal(det, got_det)
    np.testing.assert_array_equal(a.emit_observation().y, b.emit_observation().y)


def test_mc_jam_probability_matches_analytic():
    P = build_circulant(ChainSpec(5, 0.5, 0.001))
    o = exact_oracle(P, 0.95)
    T = 200_000
    cases = {
        "lara": (Strategy("lara", 5, o.pi_lara), 0.1005),
        "karaa": (Strategy("karaa", 5, o.pi_star, np.random.default_rng(1)), 0.15025),
        "random": (Strategy("random", 5, rng=np.random.default_rng(2)), 0.2),
    }
    for seed, (strategy, p) in enumerate(cases.values()):
        env = make_env(P, SignalConfig(), seed=seed, phase="eval")
        mc = jam_probability_mc(env, strategy, T)
        assert abs(mc - p) <= 3 * math.sqrt(p * (1 - p) / T)


@settings(max_examples=50, deadline=None, derandomize=True)
@given(seed=st.integers(0, 2**31 - 1))
def test_mc_memoryless_policy_property(seed):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.05, 1.0, (4, 4))
    P = TransitionMatrix(raw / raw.sum(axis=1, keepdims=True))
    table = rng.integers(4, size=4)
    psi = eig_stationary(P.p)
    exact = float(sum(psi[s] * P.p[s, table[s]] for s in range(4)))
    env = make_env(P, seed=seed % 1000, phase="eval")
    T = 40_000
    mc = jam_probability_mc(env, lambda s: int(table[s]), T)
    assert abs(mc - exact) <= 4 * math.sqrt(exact * (1 - exact) / T)


def test_signal_config_validation():
    with pytest.raises(ValueError):
        SignalConfig(snr_range_db=(10.0, 5.0))
    with pytest.raises(ValueError):
        SignalConfig(detector="matched")
    with pytest.raises(ValueError):
        SignalConfig(n0=0.0)
