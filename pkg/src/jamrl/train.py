"""Deep Q-learning against the jammer: replay, backups, TD updates, training loop."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .markov import PolicyOracle
from .nets import (_FAST, DivergenceError, MlpNetwork, RecurrentNetwork, _lstm_cell_backward, adam_for,
                   directional_gradcheck, lstm_unroll_idx, one_hot)

ARCHITECTURES = ("mlp", "recurrent", "tabular")
BACKUPS = ("target-network", "double-q", "mellowmax")

# reference hyperparameters per architecture
_REFERENCE = {
    "mlp": dict(gamma=0.95, alpha=7e-5, head_alpha=None, optimizer="adam"),
    "recurrent": dict(gamma=0.1, alpha=0.13, head_alpha=0.01, optimizer="sgd"),
    "tabular": dict(gamma=0.95, alpha=0.01, head_alpha=None, optimizer="sgd"),
}


def default_omega(n: int) -> float:
    return 15.0 if n <= 5 else 45.0


@dataclass(frozen=True)
class AgentConfig:
    """Agent hyperparameters. ``None`` means "use the reference value" and is
    replaced by :meth:`resolve` once the channel count is known."""

    architecture: str = "mlp"
    backup: str = "double-q"
    gamma: float | None = None
    alpha: float | None = None
    head_alpha: float | None = None
    omega: float | None = None
    optimizer: str | None = None
    minibatch: int = 16
    train_slots: int = 300_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal: float = 0.5
    target_sync: int = 1000
    capacity: int = 100_000
    warmup: int = 1000
    window: int = 16
    burn_in: int = 4
    log_every: int = 1000
    hidden: int = 32

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.backup not in BACKUPS:
            raise ValueError(f"unknown backup {self.backup!r}")
        if self.gamma is not None and not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.minibatch < 1:
            raise ValueError("minibatch must be at least 1")
        if self.omega is not None and self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.optimizer not in (None, "adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.burn_in < self.window:
            raise ValueError("need 0 <= burn_in < window")

    def resolve(self, n: int) -> "AgentConfig":
        ref = _REFERENCE[self.architecture]
        return dataclasses.replace(
            self,
            gamma=ref["gamma"] if self.gamma is None else self.gamma,
            alpha=ref["alpha"] if self.alpha is None else self.alpha,
            head_alpha=ref["head_alpha"] if self.head_alpha is None else self.head_alpha,
            omega=default_omega(n) if self.omega is None else self.omega,
            optimizer=ref["optimizer"] if self.optimizer is None else self.optimizer,
        )

    def epsilon(self, slot: int) -> float:
        """Linear anneal over the first ``eps_anneal`` fraction, then flat."""
        span = self.eps_anneal * self.train_slots
        if span <= 0 or slot >= span:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * slot / span


def mellowmax(values, omega: float, axis: int = -1):
    """(1/omega) * log(mean(exp(omega * values))), overflow-safe."""
    v = np.asarray(values, dtype=np.float64)
    top = np.max(v, axis=axis, keepdims=True)
    lse = np.log(np.mean(np.exp(omega * (v - top)), axis=axis))
    return np.squeeze(top, axis=axis) + lse / omega


def backup_values(q_next_online, q_next_target, backup: str, omega: float | None = None):
    """Bootstrap term of the target for each row of next-state Q-values."""
    if backup == "target-network":
        return q_next_target.max(axis=-1)
    if backup == "double-q":
        pick = np.argmax(q_next_online, axis=-1)
        return np.take_along_axis(q_next_target, pick[..., None], axis=-1)[..., 0]
    if backup == "mellowmax":
        return mellowmax(q_next_online, omega)
    raise ValueError(f"unknown backup {backup!r}")


def target_value(reward, q_next_online, q_next_target, backup: str, gamma: float, omega: float | None = None):
    """r + gamma * backup(Q(s', .)). Mellowmax ignores ``q_next_target``."""
    return np.asarray(reward, dtype=np.float64) + gamma * backup_values(q_next_online, q_next_target, backup, omega)


class TabularQ:
    """Q table behind the same forward/backward interface as the networks."""

    kind = "tabular"

    def __init__(self, n: int):
        self.n = self.n_out = n
        self.theta = np.zeros(n * n)

    @property
    def table(self) -> np.ndarray:
        return self.theta.reshape(self.n, self.n)

    @property
    def size(self) -> int:
        return self.theta.size

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x @ self.table, x

    def backward(self, cache, dq) -> np.ndarray:
        return (cache.T @ dq).ravel()

    def q_states(self, states) -> np.ndarray:
        return self.table[np.asarray(states)]

    def copy(self) -> "TabularQ":
        twin = TabularQ(self.n)
        twin.theta[:] = self.theta
        return twin

    def load_theta(self, theta) -> None:
        self.theta[:] = theta


class Sgd:
    """Plain gradient descent; ``lr`` may be a per-parameter array."""

    def __init__(self, lr):
        self.lr = lr
        self.t = 0

    def step(self, params, grads):
        if not np.all(np.isfinite(grads)):
            raise DivergenceError(f"non-finite gradient at step {self.t + 1}")
        self.t += 1
        params -= self.lr * grads
        return params


class ReplayMemory:
    """Ring buffer of transitions kept in arrival order, so it doubles as the
    contiguous stream recurrent agents draw windows from."""

    def __init__(self, capacity: int):
        self.capacity = int(capacity)
        self.s = np.zeros(self.capacity, dtype=np.int64)
        self.a = np.zeros(self.capacity, dtype=np.int64)
        self.r = np.zeros(self.capacity, dtype=np.float64)
        self.s2 = np.zeros(self.capacity, dtype=np.int64)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def push(self, tr) -> None:
        i = self.head
        self.s[i], self.a[i], self.r[i], self.s2[i] = tr.s_det, tr.action, tr.reward, tr.s_next
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _physical(self, k):
        """Chronological position(s) -> buffer slot(s)."""
        oldest = (self.head - self.size) % self.capacity
        return (oldest + k) % self.capacity

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(self.size, size=batch)

    def sample(self, batch: int, rng: np.random.Generator):
        i = self._physical(self.sample_indices(batch, rng))
        return self.s[i], self.a[i], self.r[i], self.s2[i]

    def sample_windows(self, count: int, length: int, rng: np.random.Generator):
        """``count`` windows of ``length`` consecutive transitions.

        Returns (states (length + 1, count), actions, rewards) where actions and
        rewards are (length, count); states end with the last s_next.
        """
        if self.size < length:
            raise ValueError("not enough transitions for one window")
        start = rng.integers(self.size - length + 1, size=count)
        i = self._physical(start[None, :] + np.arange(length)[:, None])
        states = np.concatenate([self.s[i], self.s2[i[-1:]]], axis=0)
        return states, self.a[i], self.r[i]

    def recent_states(self, length: int) -> np.ndarray:
        k = np.arange(max(self.size - length, 0), self.size)
        return self.s2[self._physical(k)]


def make_net(cfg: AgentConfig, n: int, rng: np.random.Generator):
    if cfg.architecture == "mlp":
        return MlpNetwork([n, cfg.hidden, cfg.hidden, cfg.hidden, n], rng=rng)
    if cfg.architecture == "recurrent":
        return RecurrentNetwork(n, n, hidden=cfg.hidden, rng=rng)
    return TabularQ(n)


def make_optimizer(cfg: AgentConfig, net):
    if cfg.optimizer == "sgd":
        if isinstance(net, RecurrentNetwork) and cfg.head_alpha is not None:
            rates = np.full(net.size, float(cfg.head_alpha))
            rates[:net.cell_size] = cfg.alpha
            return Sgd(rates)
        return Sgd(cfg.alpha)
    return adam_for(net, cfg.alpha, cfg.head_alpha)


def _check_loss(loss: float) -> float:
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite TD loss {loss}")
    return loss


def td_update(batch, cfg: AgentConfig, net, target, opt) -> float:
    """One minibatch step on mean (target - Q(s, a))^2 for feed-forward nets.

    Inputs are one-hot channels, so a single forward pass over all n states
    gives every Q value the minibatch needs, and the minibatch gradient is the
    gradient of that pass with dQ summed per (state, action). Targets are
    constants and never enter the backward pass.
    """
    s, a, r, s2 = batch
    n = net.n_out
    q_all, cache = net.forward(np.eye(n))
    q_tgt = q_all if (target is None or cfg.backup == "mellowmax") else target.forward(np.eye(n))[0]
    goal = target_value(r, q_all[s2], q_tgt[s2], cfg.backup, cfg.gamma, cfg.omega)
    err = q_all[s, a] - goal
    loss = _check_loss(float(np.mean(err * err)))
    dq = np.zeros_like(q_all)
    np.add.at(dq, (s, a), 2.0 * err / len(a))
    opt.step(net.theta, net.backward(cache, dq))
    return loss


_BACKUP_CODE = {"target-network": 0, "double-q": 1, "mellowmax": 2}


@njit(cache=True, fastmath=_FAST)
def _recurrent_td(W, b, V, c, Wt, bt, Vt, ct, states, actions, rewards, burn_in, gamma, omega, mode,
                  gW, gb, gV, gc):
    """Loss of one recurrent minibatch; gradients are added into gW, gb, gV, gc."""
    T1, B = states.shape
    L = T1 - 1
    H = V.shape[1]
    nin = W.shape[1] - H
    nout = V.shape[0]
    zero = np.zeros((B, H))
    q, hs, cs, gates, tcs = lstm_unroll_idx(W, b, V, c, states, zero, zero)
    if mode == 2:
        qt = q
    else:
        qt = lstm_unroll_idx(Wt, bt, Vt, ct, states, zero, zero)[0]
    count = (L - burn_in) * B
    dh_out = np.zeros((T1, B, H))
    loss = 0.0
    for t in range(burn_in, L):
        for k in range(B):
            nxt = q[t + 1, k]
            if mode == 0:
                boot = np.max(qt[t + 1, k])
            elif mode == 1:
                boot = qt[t + 1, k, np.argmax(nxt)]
            else:
                top = np.max(nxt)
                acc = 0.0
                for j in range(nout):
                    acc += math.exp(omega * (nxt[j] - top))
                boot = top + math.log(acc / nout) / omega
            a = actions[t, k]
            err = q[t, k, a] - (rewards[t, k] + gamma * boot)
            loss += err * err
            coef = 2.0 * err / count
            gc[a] += coef
            for j in range(H):
                gV[a, j] += coef * hs[t + 1, k, j]
                dh_out[t, k, j] = coef * V[a, j]
    dz = _lstm_cell_backward(np.ascontiguousarray(W[:, nin:].T), cs, gates, tcs, dh_out)
    for t in range(T1):
        for k in range(B):
            s = states[t, k]
            for r in range(4 * H):
                g = dz[t, k, r]
                gb[r] += g
                gW[r, s] += g
                for j in range(H):
                    gW[r, nin + j] += g * hs[t, k, j]
    return loss / count


def gradcheck_recurrent_td(rng: np.random.Generator, scale: float = 1.0, n: int = 9, length: int = 8,
                           burn_in: int = 3, count: int = 2, directions: int = 50, corrupt: bool = False) -> float:
    """Finite-difference check of the fused recurrent TD gradient. Uses the
    target-network backup, whose targets do not depend on the online weights."""
    net = RecurrentNetwork(n, n, rng=rng)
    net.theta *= scale
    net.theta += 0.1 * scale * rng.standard_normal(net.size)
    tgt = net.copy()
    tgt.theta += 0.1 * scale * rng.standard_normal(net.size)
    states = rng.integers(n, size=(length + 1, count))
    actions = rng.integers(n, size=(length, count))
    rewards = rng.integers(2, size=(length, count)).astype(np.float64)
    v, tv = net.views, tgt.views

    def loss_and_grad():
        grad = np.zeros(net.size)
        g = net.split(grad)
        loss = _recurrent_td(v["W"], v["b"], v["V"], v["c"], tv["W"], tv["b"], tv["V"], tv["c"], states,
                             actions, rewards, burn_in, 0.5, 1.0, 0, g["W"], g["b"], g["V"], g["c"])
        return loss, grad

    grad = loss_and_grad()[1]
    if corrupt:
        grad[::7] *= 1.5
    return directional_gradcheck(lambda: loss_and_grad()[0], grad, net.theta, rng, directions)


def td_update_recurrent(windows, cfg: AgentConfig, net: RecurrentNetwork, target, opt) -> float:
    """Sequence version of :func:`td_update` on (states, actions, rewards)
    windows. The first ``burn_in`` steps only warm up the hidden state; the
    loss covers the remaining steps. Targets come from the same unroll (or the
    target net's) and are held constant."""
    states, actions, rewards = windows
    v = net.views
    tv = target.views if target is not None else v
    if getattr(net, "_grad", None) is None:
        net._grad = np.zeros_like(net.theta)
        net._grad_views = net.split(net._grad)
    grad, g = net._grad, net._grad_views
    grad.fill(0.0)
    loss = _recurrent_td(v["W"], v["b"], v["V"], v["c"], tv["W"], tv["b"], tv["V"], tv["c"],
                         np.ascontiguousarray(states), np.ascontiguousarray(actions),
                         np.ascontiguousarray(rewards, dtype=np.float64), cfg.burn_in, cfg.gamma,
                         float(cfg.omega or 1.0), _BACKUP_CODE[cfg.backup], g["W"], g["b"], g["V"], g["c"])
    _check_loss(loss)
    opt.step(net.theta, grad)
    return loss


@dataclass(frozen=True)
class Policies:
    pi_star: tuple[int, ...]
    pi_lara: tuple[int, ...]
    lara_ties: tuple[frozenset, ...]
    q: np.ndarray


def extract_policies(net, history=()) -> Policies:
    """Greedy argmax and argmin per detected state.

    Recurrent nets are evaluated after replaying ``history`` (detected states)
    from a zero hidden state. Ties go to the lowest channel; the full argmin
    tie set is kept.
    """
    n = net.n_out
    if isinstance(net, RecurrentNetwork):
        q = net.q_after(history)
    else:
        q = net.q_states(np.arange(n))
    q = np.asarray(q)
    ties = tuple(frozenset(int(i) for i in np.flatnonzero(row == row.min())) for row in q)
    return Policies(
        tuple(int(i) for i in np.argmax(q, axis=1)),
        tuple(int(i) for i in np.argmin(q, axis=1)),
        ties,
        q,
    )


def policy_error_count(pi_hat, oracle) -> int:
    ref = oracle.pi_star if isinstance(oracle, PolicyOracle) else oracle
    if len(pi_hat) != len(ref):
        raise ValueError("policies cover different state spaces")
    return sum(int(a != b) for a, b in zip(pi_hat, ref))


TRAINLOG_COLUMNS = ("slot", "loss", "epsilon", "pi_star_errors", "cum_reward")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    diverged: str | None = None

    def append(self, slot, loss, epsilon, errors, cum_reward):
        if self.rows and slot <= self.rows[-1][0]:
            raise ValueError("log slots must increase")
        self.rows.append((int(slot), float(loss), float(epsilon), int(errors), int(cum_reward)))

    @property
    def final_errors(self) -> int | None:
        return self.rows[-1][3] if self.rows else None

    def write_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAINLOG_COLUMNS)
            for slot, loss, eps, errors, cum in self.rows:
                w.writerow([slot, repr(loss), repr(eps), errors, cum])


@dataclass
class TrainResult:
    net: object
    log: TrainLog
    policies: Policies
    history: np.ndarray


def train(env, cfg: AgentConfig, oracle: PolicyOracle | None, rngs: dict) -> TrainResult:
    """Run ``cfg.train_slots`` slots of epsilon-greedy play with replay.

    ``rngs`` needs ``exploration``, ``replay`` and ``init`` generators. On
    divergence a :class:`DivergenceError` carrying the log so far is raised.
    """
    n = env.n
    cfg = cfg.resolve(n)
    explore, replay = rngs["exploration"], rngs["replay"]
    net = make_net(cfg, n, rngs["init"])
    opt = make_optimizer(cfg, net)
    target = None if cfg.backup == "mellowmax" else net.copy()
    memory = ReplayMemory(cfg.capacity)
    log = TrainLog()
    recurrent = cfg.architecture == "recurrent"
    windows = max(1, cfg.minibatch // cfg.window)
    if recurrent:
        h, c = net.zero_state()
    loss_sum, loss_count, cum_reward = 0.0, 0, 0
    try:
        for slot in range(cfg.train_slots):
            s = env.s_det
            if recurrent:
                q, h, c = net.step_states(s, h, c)
            eps = cfg.epsilon(slot)
            if explore.random() < eps:
                a = int(explore.integers(n))
            else:
                if not recurrent:
                    q = net.q_states([s])[0]
                a = int(np.argmax(q))
            tr = env.step(a)
            cum_reward += tr.reward
            memory.push(tr)
            if len(memory) >= max(cfg.warmup, cfg.window):
                if recurrent:
                    loss = td_update_recurrent(memory.sample_windows(windows, cfg.window, replay), cfg, net, target, opt)
                else:
                    loss = td_update(memory.sample(cfg.minibatch, replay), cfg, net, target, opt)
                loss_sum += loss
                loss_count += 1
            if target is not None and (slot + 1) % cfg.target_sync == 0:
                target.load_theta(net.theta)
            if (slot + 1) % cfg.log_every == 0 or slot + 1 == cfg.train_slots:
                pol = extract_policies(net, memory.recent_states(cfg.window) if recurrent else ())
                errors = policy_error_count(pol.pi_star, oracle) if oracle is not None else -1
                mean_loss = loss_sum / loss_count if loss_count else float("nan")
                log.append(slot + 1, mean_loss, eps, errors, cum_reward)
                loss_sum, loss_count = 0.0, 0
    except DivergenceError as exc:
        log.diverged = str(exc)
        raise DivergenceError(str(exc), log) from exc
    history = memory.recent_states(cfg.window) if recurrent else np.zeros(0, dtype=np.int64)
    return TrainResult(net, log, extract_policies(net, history), history)
