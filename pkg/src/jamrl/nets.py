"""Tiny Q-networks with hand-written backprop, Adam, and gradient checking.

Every network keeps all of its parameters in one flat float64 vector
``theta``; the weight matrices are views into it. Gradients come back in the
same flat layout, which keeps Adam, snapshots and checkpoints trivial.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from numba import njit

HIDDEN = 32


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite gradient or loss."""

    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_out, fan_in))


def one_hot(states, n: int) -> np.ndarray:
    return np.eye(n)[np.asarray(states, dtype=np.int64)]


class _FlatParams:
    """Shared plumbing: flat parameter vector plus named views."""

    kind = ""

    def _layout(self) -> list[tuple[str, tuple[int, ...]]]:
        raise NotImplementedError

    def _allocate(self) -> None:
        self._blocks = []
        off = 0
        for name, shape in self._layout():
            size = math.prod(shape)
            self._blocks.append((name, off, off + size, shape))
            off += size
        self.theta = np.zeros(off)
        self._bind()

    def _bind(self) -> None:
        self.views = self.split(self.theta)

    @property
    def size(self) -> int:
        return self.theta.size

    def split(self, flat: np.ndarray) -> dict:
        """Named block views into any vector laid out like ``theta``."""
        return {name: flat[lo:hi].reshape(shape) for name, lo, hi, shape in self._blocks}

    def copy(self):
        """Deep value copy, used as a frozen target network."""
        twin = object.__new__(type(self))
        twin.__dict__.update({k: v for k, v in self.__dict__.items() if k not in ("theta", "views", "_grad", "_grad_views")})
        twin.theta = self.theta.copy()
        twin._bind()
        return twin

    def load_theta(self, theta: np.ndarray) -> None:
        self.theta[:] = theta

    def save(self, path) -> None:
        """Text checkpoint.

        Line 1: ``jamrl-params 1 <kind> <arch ints...>``. Then for each block,
        in layout order, a line ``<name> <dims...>`` followed by its values in
        C order, one ``repr`` float per line (exact round trip).
        """
        lines = [" ".join(["jamrl-params", "1", self.kind, *map(str, self.arch)])]
        for name, shape in self._layout():
            lines.append(" ".join([name, *map(str, shape)]))
            lines.extend(repr(float(v)) for v in self.views[name].ravel())
        Path(path).write_text("\n".join(lines) + "\n")

    def q_states(self, states) -> np.ndarray:
        raise NotImplementedError


def load_params(path):
    lines = Path(path).read_text().splitlines()
    head = lines[0].split()
    if head[:2] != ["jamrl-params", "1"]:
        raise ValueError(f"{path}: not a jamrl parameter file")
    kind, arch = head[2], [int(v) for v in head[3:]]
    if kind == "mlp":
        net = MlpNetwork(arch, init="zeros")
    elif kind == "lstm":
        net = RecurrentNetwork(*arch, init="zeros")
    else:
        raise ValueError(f"{path}: unknown network kind {kind!r}")
    i = 1
    for name, shape in net._layout():
        got = lines[i].split()
        if got[0] != name or tuple(int(d) for d in got[1:]) != tuple(shape):
            raise ValueError(f"{path}: block header mismatch at line {i + 1}: {lines[i]!r}")
        size = int(np.prod(shape))
        net.views[name][...] = np.array([float(v) for v in lines[i + 1:i + 1 + size]]).reshape(shape)
        i += 1 + size
    return net


class MlpNetwork(_FlatParams):
    """Fully connected Q-network; rectifier hidden layers, linear output."""

    kind = "mlp"

    def __init__(self, sizes, rng: np.random.Generator | None = None, activation: str = "relu", init: str = "glorot"):
        self.sizes = [int(s) for s in sizes]
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self._allocate()
        if init == "glorot":
            rng = rng if rng is not None else np.random.default_rng(0)
            for k in range(len(self.sizes) - 1):
                w = self.views[f"W{k}"]
                w[...] = glorot(rng, *w.shape)
        elif init != "zeros":
            raise ValueError(f"unknown init {init!r}")

    @property
    def arch(self):
        return self.sizes

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def _layout(self):
        out = []
        for k in range(len(self.sizes) - 1):
            out.append((f"W{k}", (self.sizes[k + 1], self.sizes[k])))
            out.append((f"b{k}", (self.sizes[k + 1],)))
        return out

    def forward(self, x):
        """Q-values for a batch (B, n_in) or a single input (n_in,)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"input shape {x.shape} does not match n_in={self.sizes[0]}")
        acts = [x]
        pre = []
        a = x
        last = len(self.sizes) - 2
        for k in range(last + 1):
            z = a @ self.views[f"W{k}"].T + self.views[f"b{k}"]
            pre.append(z)
            a = z if (k == last or self.activation == "identity") else np.maximum(z, 0.0)
            acts.append(a)
        q = acts[-1]
        cache = (acts, pre, single)
        return (q[0] if single else q), cache

    def backward(self, cache, dq) -> np.ndarray:
        """Flat gradient of sum(dq * Q) with respect to ``theta``."""
        if cache is None:
            raise ValueError("backward needs the cache returned by forward")
        acts, pre, single = cache
        g = np.asarray(dq, dtype=np.float64)
        if single:
            g = g[None]
        grad = np.zeros_like(self.theta)
        gv = self.split(grad)
        for k in range(len(self.sizes) - 2, -1, -1):
            if k != len(self.sizes) - 2 and self.activation == "relu":
                g = g * (pre[k] > 0.0)
            gv[f"W{k}"][...] = g.T @ acts[k]
            gv[f"b{k}"][...] = g.sum(axis=0)
            if k:
                g = g @ self.views[f"W{k}"]
        return grad

    def q_states(self, states) -> np.ndarray:
        return self.forward(one_hot(states, self.sizes[0]))[0]


# reassociation for the dot products; no finite-math assumption, since the
# gate formulas below rely on exp overflowing to inf for large |z|
_FAST = {"reassoc", "contract", "nsz", "arcp"}


@njit(cache=True, fastmath=_FAST)
def _lstm_cell_forward(zx, Wh, h0, c0):
    """Recurrence only: ``zx`` (T, B, 4H) holds the input projection plus bias."""
    T, B, H4 = zx.shape
    H = H4 // 4
    hs = np.empty((T + 1, B, H))
    cs = np.empty((T + 1, B, H))
    gates = np.empty((T, B, H4))
    tcs = np.empty((T, B, H))
    hs[0] = h0
    cs[0] = c0
    z = np.empty(H4)
    h = np.empty(H)
    for t in range(T):
        for k in range(B):
            h[:] = hs[t, k]
            for r in range(H4):
                row = Wh[r]
                acc = 0.0
                for j in range(H):
                    acc += row[j] * h[j]
                z[r] = zx[t, k, r] + acc
            for j in range(H):
                ig = 1.0 / (1.0 + math.exp(-z[j]))
                fg = 1.0 / (1.0 + math.exp(-z[H + j]))
                og = 1.0 / (1.0 + math.exp(-z[2 * H + j]))
                gg = 2.0 / (1.0 + math.exp(-2.0 * z[3 * H + j])) - 1.0
                gates[t, k, j] = ig
                gates[t, k, H + j] = fg
                gates[t, k, 2 * H + j] = og
                gates[t, k, 3 * H + j] = gg
                cn = fg * cs[t, k, j] + ig * gg
                cs[t + 1, k, j] = cn
                tc = 2.0 / (1.0 + math.exp(-2.0 * cn)) - 1.0
                tcs[t, k, j] = tc
                hs[t + 1, k, j] = og * tc
    return hs, cs, gates, tcs


@njit(cache=True, fastmath=_FAST)
def _lstm_cell_backward(WhT, cs, gates, tcs, dh_out):
    """Backprop through the recurrence; returns dz (T, B, 4H)."""
    T, B, H = dh_out.shape
    dz = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        for k in range(B):
            for j in range(H):
                dh = dh_out[t, k, j] + dh_next[k, j]
                ig = gates[t, k, j]
                fg = gates[t, k, H + j]
                og = gates[t, k, 2 * H + j]
                gg = gates[t, k, 3 * H + j]
                tc = tcs[t, k, j]
                dct = dh * og * (1.0 - tc * tc) + dc_next[k, j]
                dz[t, k, j] = dct * gg * ig * (1.0 - ig)
                dz[t, k, H + j] = dct * cs[t, k, j] * fg * (1.0 - fg)
                dz[t, k, 2 * H + j] = dh * tc * og * (1.0 - og)
                dz[t, k, 3 * H + j] = dct * ig * (1.0 - gg * gg)
                dc_next[k, j] = dct * fg
            for j in range(H):
                acc = 0.0
                for r in range(4 * H):
                    acc += WhT[j, r] * dz[t, k, r]
                dh_next[k, j] = acc
    return dz


@njit(cache=True, fastmath=_FAST)
def lstm_unroll_idx(W, b, V, c, states, h0, c0):
    """Unroll on integer (channel index) inputs of shape (T, B); Q for every step."""
    T, B = states.shape
    H = V.shape[1]
    nin = W.shape[1] - H
    zx = np.empty((T, B, 4 * H))
    for t in range(T):
        for k in range(B):
            s = states[t, k]
            for r in range(4 * H):
                zx[t, k, r] = W[r, s] + b[r]
    hs, cs, gates, tcs = _lstm_cell_forward(zx, np.ascontiguousarray(W[:, nin:]),
                                            h0, c0)
    q = np.empty((T, B, V.shape[0]))
    for t in range(T):
        for k in range(B):
            for a in range(V.shape[0]):
                acc = c[a]
                for j in range(H):
                    acc += V[a, j] * hs[t + 1, k, j]
                q[t, k, a] = acc
    return q, hs, cs, gates, tcs



class RecurrentNetwork(_FlatParams):
    """One LSTM cell (gates ordered input, forget, output, candidate) and a
    linear Q head on the hidden state."""

    kind = "lstm"

    def __init__(self, n_in: int, n_out: int, hidden: int = HIDDEN, rng: np.random.Generator | None = None, init: str = "glorot"):
        self.n_in, self.n_out, self.hidden = int(n_in), int(n_out), int(hidden)
        self._allocate()
        if init == "glorot":
            rng = rng if rng is not None else np.random.default_rng(0)
            H = self.hidden
            W = self.views["W"]
            for g in range(4):
                W[g * H:(g + 1) * H] = glorot(rng, H, self.n_in + H)
            self.views["b"][H:2 * H] = 1.0
            self.views["V"][...] = glorot(rng, self.n_out, H)
        elif init != "zeros":
            raise ValueError(f"unknown init {init!r}")

    @property
    def arch(self):
        return [self.n_in, self.n_out, self.hidden]

    def _layout(self):
        H = self.hidden
        return [
            ("W", (4 * H, self.n_in + H)),
            ("b", (4 * H,)),
            ("V", (self.n_out, H)),
            ("c", (self.n_out,)),
        ]

    @property
    def cell_size(self) -> int:
        """Number of leading ``theta`` entries that belong to the cell."""
        H = self.hidden
        return 4 * H * (self.n_in + H) + 4 * H

    def zero_state(self, batch: int = 1):
        return np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden))

    def unroll(self, xs, h0=None, c0=None):
        """Run the cell over ``xs`` of shape (T, B, n_in) or (T, n_in).

        Returns (q for every step, cache); cache holds hidden and cell
        trajectories of length T + 1.
        """
        xs = np.asarray(xs, dtype=np.float64)
        single = xs.ndim == 2
        if single:
            xs = xs[:, None, :]
        if xs.ndim != 3 or xs.shape[0] == 0 or xs.shape[2] != self.n_in:
            raise ValueError(f"sequence shape {xs.shape} does not match n_in={self.n_in}")
        B = xs.shape[1]
        if h0 is None:
            h0, c0 = self.zero_state(B)
        v = self.views
        W = v["W"]
        zx = xs @ W[:, :self.n_in].T + v["b"]
        hs, cs, gates, tcs = _lstm_cell_forward(zx, np.ascontiguousarray(W[:, self.n_in:]),
                                                np.asarray(h0, dtype=np.float64),
                                                np.asarray(c0, dtype=np.float64))
        q = hs[1:] @ v["V"].T + v["c"]
        return (q[:, 0] if single else q), (xs, hs, cs, gates, tcs, single)

    def forward(self, xs, h0=None, c0=None):
        """Q-values after the last step, plus the hidden trajectory (h, c)."""
        q, cache = self.unroll(xs, h0, c0)
        _, hs, cs, _, _, single = cache
        if single:
            return q[-1], (hs[:, 0], cs[:, 0])
        return q[-1], (hs, cs)

    def backward(self, cache, dq) -> np.ndarray:
        """Flat gradient of sum(dq * Q) over all steps (full BPTT over the window)."""
        if cache is None:
            raise ValueError("backward needs the cache returned by unroll")
        xs, hs, cs, gates, tcs, single = cache
        dq = np.asarray(dq, dtype=np.float64)
        if single:
            dq = dq[:, None, :]
        nin, H = self.n_in, self.hidden
        grad = np.zeros_like(self.theta)
        gv = self.split(grad)
        V = self.views["V"]
        T, B = dq.shape[:2]
        flat_dq = dq.reshape(T * B, -1)
        gv["V"][...] = flat_dq.T @ hs[1:].reshape(T * B, H)
        gv["c"][...] = flat_dq.sum(axis=0)
        dh_out = dq @ V
        WhT = np.ascontiguousarray(self.views["W"][:, nin:].T)
        dz = _lstm_cell_backward(WhT, cs, gates, tcs, dh_out).reshape(T * B, 4 * H)
        gv["W"][:, :nin] = dz.T @ xs.reshape(T * B, nin)
        gv["W"][:, nin:] = dz.T @ hs[:-1].reshape(T * B, H)
        gv["b"][...] = dz.sum(axis=0)
        return grad

    def step_states(self, state: int, h, c):
        """Advance the hidden state by one detected channel; returns (q, h, c)."""
        v = self.views
        q, hs, cs, _, _ = lstm_unroll_idx(v["W"], v["b"], v["V"], v["c"], np.full((1, 1), state), h, c)
        return q[0, 0], hs[1], cs[1]

    def q_after(self, history, states=None) -> np.ndarray:
        """Q for each candidate current state after replaying ``history``."""
        states = range(self.n_out) if states is None else states
        h, c = self.zero_state()
        for s in history:
            _, h, c = self.step_states(int(s), h, c)
        return np.array([self.step_states(int(s), h, c)[0] for s in states])

    def q_states(self, states, history=()) -> np.ndarray:
        return self.q_after(history, states)


@njit(cache=True, fastmath=_FAST)
def _adam_kernel(theta, grad, m, v, lr, beta1, beta2, eps, t):
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i in range(theta.size):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        theta[i] -= lr[i] * (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)


class Adam:
    """Bias-corrected Adam on a flat parameter vector.

    ``lr`` may be a scalar or a per-parameter array (used to give the LSTM
    cell and its output head separate learning rates).
    """

    def __init__(self, size: int, lr, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self._rates = np.broadcast_to(np.asarray(lr, dtype=np.float64), (size,)).copy()
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Update ``params`` in place and return it."""
        if grads.shape != params.shape or self.m.shape != params.shape:
            raise ValueError("parameter, gradient and moment shapes differ")
        if not np.all(np.isfinite(grads)):
            raise DivergenceError(f"non-finite gradient at Adam step {self.t + 1}")
        self.t += 1
        _adam_kernel(params, grads, self.m, self.v, self._rates, self.beta1, self.beta2, self.eps, self.t)
        return params


def adam_for(net, lr, head_lr=None) -> Adam:
    if head_lr is None or not isinstance(net, RecurrentNetwork):
        return Adam(net.size, lr)
    rates = np.full(net.size, float(head_lr))
    rates[:net.cell_size] = lr
    return Adam(net.size, rates)


def directional_gradcheck(loss, grad, theta: np.ndarray, rng: np.random.Generator,
                          directions: int = 50, h: float = 1e-5) -> float:
    """Max relative error between grad . d and the central difference of
    ``loss`` along ``directions`` random unit directions d. ``loss`` reads the
    (mutated in place) ``theta``."""
    worst = 0.0
    base = theta.copy()
    for _ in range(directions):
        d = rng.standard_normal(theta.size)
        d /= np.linalg.norm(d)
        theta[:] = base + h * d
        up = loss()
        theta[:] = base - h * d
        down = loss()
        theta[:] = base
        fd = (up - down) / (2 * h)
        an = float(grad @ d)
        denom = max(abs(fd), abs(an), 1e-8)
        worst = max(worst, abs(fd - an) / denom)
    return worst


def _corrupted(grad: np.ndarray) -> np.ndarray:
    """Negative control for the checks: every seventh entry scaled by 1.5."""
    bad = grad.copy()
    bad[::7] *= 1.5
    return bad


def gradcheck_mlp(rng: np.random.Generator, scale: float = 1.0, n: int = 9, batch: int = 8,
                  directions: int = 50, corrupt: bool = False) -> float:
    net = MlpNetwork([n, HIDDEN, HIDDEN, HIDDEN, n], rng=rng)
    net.theta *= scale
    net.theta += 0.1 * scale * rng.standard_normal(net.size)
    x = one_hot(rng.integers(n, size=batch), n)
    g = rng.standard_normal((batch, n))
    _, cache = net.forward(x)
    grad = net.backward(cache, g)
    if corrupt:
        grad = _corrupted(grad)
    return directional_gradcheck(lambda: float(np.sum(g * net.forward(x)[0])), grad, net.theta, rng, directions)


def gradcheck_lstm(rng: np.random.Generator, scale: float = 1.0, n: int = 9, length: int = 4,
                   batch: int = 2, directions: int = 50, corrupt: bool = False) -> float:
    net = RecurrentNetwork(n, n, rng=rng)
    net.theta *= scale
    net.theta += 0.1 * scale * rng.standard_normal(net.size)
    xs = one_hot(rng.integers(n, size=(length, batch)), n)
    g = rng.standard_normal((length, batch, n))
    _, cache = net.unroll(xs)
    grad = net.backward(cache, g)
    if corrupt:
        grad = _corrupted(grad)
    return directional_gradcheck(lambda: float(np.sum(g * net.unroll(xs)[0])), grad, net.theta, rng, directions)
