import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamrl.nets import (Adam, DivergenceError, MlpNetwork, RecurrentNetwork, adam_for, gradcheck_lstm,
                        gradcheck_mlp, load_params, one_hot)


def sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def reference_lstm(net, xs):
    """Straightforward LSTM (gates: input, forget, output, candidate)."""
    H, n = net.hidden, net.n_in
    W, b, V, c = (net.views[k] for k in "WbVc")
    h, cell = np.zeros(H), np.zeros(H)
    out = []
    for x in xs:
        z = W @ np.concatenate([x, h]) + b
        i, f, o, g = sig(z[:H]), sig(z[H:2 * H]), sig(z[2 * H:3 * H]), np.tanh(z[3 * H:])
        cell = f * cell + i * g
        h = o * np.tanh(cell)
        out.append(V @ h + c)
    return np.array(out)


def elementwise_fd(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for k in range(theta.size):
        old = theta[k]
        theta[k] = old + h
        up = f()
        theta[k] = old - h
        down = f()
        theta[k] = old
        g[k] = (up - down) / (2 * h)
    return g


def test_mlp_hand_computed_forward():
    net = MlpNetwork([2, 2, 2], init="zeros")
    net.views["W0"][...] = [[1.0, -1.0], [0.5, 2.0]]
    net.views["b0"][...] = [0.0, -1.0]
    net.views["W1"][...] = [[1.0, 1.0], [2.0, -1.0]]
    net.views["b1"][...] = [0.5, 0.0]
    # x = (1, 0): hidden pre (1, -0.5) -> relu (1, 0) -> out (1.5, 2)
    q, _ = net.forward(np.array([1.0, 0.0]))
    np.testing.assert_allclose(q, [1.5, 2.0])
    # x = (0, 1): hidden pre (-1, 1) -> relu (0, 1) -> out (1.5, -1)
    q, _ = net.forward(np.array([[0.0, 1.0]]))
    np.testing.assert_allclose(q, [[1.5, -1.0]])


def test_zero_init_gives_zero_q():
    x = one_hot([0, 3, 8], 9)
    assert np.all(MlpNetwork([9, 32, 9], init="zeros").forward(x)[0] == 0.0)
    assert np.all(RecurrentNetwork(9, 9, init="zeros").unroll(x)[0] == 0.0)


def test_forward_is_pure():
    net = MlpNetwork([9, 32, 32, 32, 9], rng=np.random.default_rng(0))
    x = one_hot([1, 2, 3], 9)
    first = net.forward(x)[0].copy()
    before = net.theta.copy()
    np.testing.assert_array_equal(net.forward(x)[0], first)
    np.testing.assert_array_equal(net.theta, before)


def test_forward_rejects_bad_shape():
    with pytest.raises(ValueError):
        MlpNetwork([9, 4, 9]).forward(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        RecurrentNetwork(9, 9).unroll(np.zeros((3, 5)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), batch=st.integers(1, 12))
def test_mlp_batch_rows_are_independent(seed, batch):
    rng = np.random.default_rng(seed)
    net = MlpNetwork([5, 8, 5], rng=rng)
    x = rng.standard_normal((batch, 5))
    perm = rng.permutation(batch)
    np.testing.assert_allclose(net.forward(x[perm])[0], net.forward(x)[0][perm], atol=1e-14)


def test_linear_net_gradient_closed_form():
    rng = np.random.default_rng(1)
    net = MlpNetwork([3, 4], rng=rng, activation="identity")
    x = rng.standard_normal((6, 3))
    dq = rng.standard_normal((6, 4))
    _, cache = net.forward(x)
    g = net.split(net.backward(cache, dq))
    np.testing.assert_allclose(g["W0"], dq.T @ x, atol=1e-13)
    np.testing.assert_allclose(g["b0"], dq.sum(axis=0), atol=1e-13)


def test_zero_output_gradient_gives_zero_gradients():
    rng = np.random.default_rng(2)
    net = MlpNetwork([9, 32, 9], rng=rng)
    _, cache = net.forward(one_hot([1, 2], 9))
    assert np.all(net.backward(cache, np.zeros((2, 9))) == 0.0)
    rnn = RecurrentNetwork(9, 9, rng=rng)
    _, cache = rnn.unroll(one_hot([[1, 2], [3, 4]], 9))
    assert np.all(rnn.backward(cache, np.zeros((2, 2, 9))) == 0.0)


def test_mlp_gradient_elementwise():
    rng = np.random.default_rng(3)
    net = MlpNetwork([4, 5, 5, 3], rng=rng)
    net.theta += 0.1 * rng.standard_normal(net.size)
    x = rng.standard_normal((3, 4))
    g = rng.standard_normal((3, 3))
    _, cache = net.forward(x)
    an = net.backward(cache, g)
    fd = elementwise_fd(lambda: float(np.sum(g * net.forward(x)[0])), net.theta)
    np.testing.assert_allclose(an, fd, rtol=1e-5, atol=1e-7)


def test_lstm_matches_reference_forward():
    rng = np.random.default_rng(4)
    net = RecurrentNetwork(5, 5, hidden=6, rng=rng)
    net.theta += 0.3 * rng.standard_normal(net.size)
    xs = one_hot(rng.integers(5, size=7), 5)
    q, _ = net.unroll(xs)
    np.testing.assert_allclose(q, reference_lstm(net, xs), atol=1e-12)


def test_lstm_gradient_elementwise():
    rng = np.random.default_rng(5)
    net = RecurrentNetwork(4, 3, hidden=3, rng=rng)
    net.theta += 0.2 * rng.standard_normal(net.size)
    xs = one_hot(rng.integers(4, size=(5, 2)), 4)
    g = rng.standard_normal((5, 2, 3))
    _, cache = net.unroll(xs)
    an = net.backward(cache, g)
    fd = elementwise_fd(lambda: float(np.sum(g * reference_lstm_batch(net, xs))), net.theta)
    np.testing.assert_allclose(an, fd, rtol=1e-5, atol=1e-7)


def reference_lstm_batch(net, xs):
    return np.stack([reference_lstm(net, xs[:, b]) for b in range(xs.shape[1])], axis=1)


@pytest.mark.parametrize("scale", [0.1, 1.0, 3.0])
def test_directional_gradchecks(scale):
    assert gradcheck_mlp(np.random.default_rng(6), scale) < 1e-4
    assert gradcheck_lstm(np.random.default_rng(7), scale) < 1e-4


def test_gradcheck_negative_control_fails():
    assert gradcheck_mlp(np.random.default_rng(8), 1.0, corrupt=True) > 1e-4
    assert gradcheck_lstm(np.random.default_rng(9), 1.0, corrupt=True) > 1e-4


def test_length_one_sequence_equals_single_step():
    net = RecurrentNetwork(9, 9, rng=np.random.default_rng(10))
    for s in range(9):
        q_seq = net.unroll(one_hot([s], 9))[0][0]
        h, c = net.zero_state()
        q_step, _, _ = net.step_states(s, h[0], c[0])
        np.testing.assert_allclose(q_seq, q_step, atol=1e-12)


def test_q_after_replays_history():
    net = RecurrentNetwork(5, 5, rng=np.random.default_rng(11))
    hist = [3, 1, 4]
    for s in range(5):
        np.testing.assert_allclose(net.q_after(hist, [s])[0], net.unroll(one_hot(hist + [s], 5))[0][-1], atol=1e-12)


def test_adam_first_step_is_lr_sized():
    theta = np.zeros(5)
    Adam(5, 0.01).step(theta, np.array([1.0, -2.0, 0.5, 3.0, -1e-3]))
    # bias-corrected first step: -lr * g / (|g| + eps)
    np.testing.assert_allclose(theta, -0.01 * np.sign([1.0, -2.0, 0.5, 3.0, -1e-3]), rtol=1e-4)


def test_adam_leaves_params_on_zero_grad_or_zero_lr():
    theta = np.arange(4.0)
    opt = Adam(4, 0.1)
    for _ in range(3):
        opt.step(theta, np.zeros(4))
    np.testing.assert_array_equal(theta, np.arange(4.0))
    Adam(4, 0.0).step(theta, np.ones(4))
    np.testing.assert_array_equal(theta, np.arange(4.0))


def test_adam_rejects_non_finite():
    with pytest.raises(DivergenceError):
        Adam(2, 0.1).step(np.zeros(2), np.array([1.0, np.nan]))
    with pytest.raises(DivergenceError):
        Adam(2, 0.1).step(np.zeros(2), np.array([np.inf, 0.0]))


def test_adam_split_rates_for_recurrent_head():
    net = RecurrentNetwork(3, 3, hidden=2, rng=np.random.default_rng(12))
    opt = adam_for(net, 0.5, head_lr=0.01)
    before = net.theta.copy()
    opt.step(net.theta, np.ones(net.size))
    step = before - net.theta
    np.testing.assert_allclose(step[:net.cell_size], 0.5, rtol=1e-6)
    np.testing.assert_allclose(step[net.cell_size:], 0.01, rtol=1e-6)


def test_adam_solves_linear_regression():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((16, 4))
    y = x @ rng.standard_normal((4, 1)) + 0.3
    net = MlpNetwork([4, 1], rng=rng, activation="identity")
    opt = Adam(net.size, 1e-2)

    def loss_grad():
        q, cache = net.forward(x)
        err = q - y
        return float(np.mean(err ** 2)), net.backward(cache, 2 * err / len(x))

    initial, _ = loss_grad()
    for _ in range(5000):
        loss, g = loss_grad()
        opt.step(net.theta, g)
    assert loss_grad()[0] < 1e-3 * initial


def test_copy_is_an_independent_snapshot():
    net = MlpNetwork([9, 16, 9], rng=np.random.default_rng(14))
    x = one_hot(range(9), 9)
    snap = net.copy()
    again = net.copy()
    np.testing.assert_array_equal(snap.forward(x)[0], net.forward(x)[0])
    np.testing.assert_array_equal(snap.theta, again.theta)
    net.theta += 1.0
    assert not np.array_equal(snap.forward(x)[0], net.forward(x)[0])
    np.testing.assert_array_equal(snap.theta, again.theta)


@pytest.mark.parametrize("make", [lambda r: MlpNetwork([9, 32, 32, 9], rng=r), lambda r: RecurrentNetwork(9, 9, rng=r)])
def test_save_load_round_trip(tmp_path, make):
    net = make(np.random.default_rng(15))
    net.theta += 1e-3 * np.random.default_rng(16).standard_normal(net.size)
    path = tmp_path / "params.txt"
    net.save(path)
    back = load_params(path)
    assert type(back) is type(net) and back.arch == net.arch
    np.testing.assert_array_equal(back.theta, net.theta)
    back.save(tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()


def test_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("not-params 1 mlp 2 2\n")
    with pytest.raises(ValueError):
        load_params(bad)
    net = MlpNetwork([2, 2])
    net.save(bad)
    lines = bad.read_text().splitlines()
    lines[1] = "W0 3 2"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError):
        load_params(bad)


def test_glorot_init_bounds():
    net = MlpNetwork([9, 32, 9], rng=np.random.default_rng(17))
    lim = math.sqrt(6 / (9 + 32))
    w = net.views["W0"]
    assert np.all(np.abs(w) <= lim) and np.abs(w).max() > 0.9 * lim
    assert np.all(net.views["b0"] == 0.0)
