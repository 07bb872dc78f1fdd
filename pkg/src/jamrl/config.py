"""Experiment configuration, flat ``key = value`` files, and seeded substreams."""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import SignalConfig
from .train import AgentConfig

STREAMS = ("chain", "noise", "snr", "exploration", "replay", "strategy", "init", "permutation")


class ConfigError(ValueError):
    pass


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, independent generator derived from a 64-bit master seed.

    Stream ``name`` is Philox seeded by ``SeedSequence(seed, spawn_key=(k,))``
    where ``k`` is the position of ``name`` in :data:`STREAMS`. Philox is a
    counter-based generator, so each stream can be replayed on its own.
    """
    k = STREAMS.index(name)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k,))))


def streams(seed: int, *names: str) -> dict:
    return {name: substream(seed, name) for name in (names or STREAMS)}


@dataclass(frozen=True)
class ChainConfig:
    """Jammer chain. ``theta`` wins over ``h_tilde`` when both are set. With
    ``permute`` the rows are shuffled by a permutation drawn from the
    ``permutation`` stream of ``permutation_seed``, so every agent seed of an
    experiment faces the same chain."""

    n: int = 9
    epsilon: float = 1e-3
    h_tilde: float | None = 0.85
    theta: float | None = None
    permute: bool = True
    permutation_seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("chain.n must be at least 2")
        if self.h_tilde is None and self.theta is None:
            raise ConfigError("set chain.h_tilde or chain.theta")


@dataclass(frozen=True)
class SweepConfig:
    """Grids for the two figure sweeps."""

    fig1_h_tilde: tuple[float, ...] = (0.85, 0.9)
    fig1_networks: tuple[str, ...] = ("mlp", "recurrent")
    fig1_backups: tuple[str, ...] = ("double-q", "mellowmax")
    fig2_h_tilde: tuple[float, ...] = (0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
    fig2_n: tuple[int, ...] = (5, 9)
    fig2_network: str = "recurrent"
    fig2_backup: str = "mellowmax"
    plot: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    chain: ChainConfig = field(default_factory=ChainConfig)
    signal: SignalConfig = field(default_factory=SignalConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    strategies: tuple[str, ...] = ("random", "karaa", "lara")
    eval_slots: int = 1_000_000
    seeds: tuple[int, ...] = (0,)
    out: str = "results"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for s in self.strategies:
            if s not in ("random", "karaa", "lara"):
                raise ConfigError(f"unknown strategy {s!r}")
        if self.eval_slots < 1:
            raise ConfigError("eval_slots must be positive")


_SECTIONS = {"chain": ChainConfig, "signal": SignalConfig, "agent": AgentConfig, "sweep": SweepConfig}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _coerce(raw: str, hint, key: str):
    raw = raw.strip()
    args = typing.get_args(hint)
    if type(None) in args:
        if raw.lower() == "none":
            return None
        hint = next(a for a in args if a is not type(None))
        args = typing.get_args(hint)
    if typing.get_origin(hint) is tuple:
        return tuple(_coerce(p, args[0], key) for p in raw.split(",") if p.strip())
    try:
        if hint is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {hint.__name__}") from exc
    return raw


def to_lines(cfg: ExperimentConfig, with_out: bool = False) -> list[str]:
    """Config as ``key = value`` lines, dotted by section.

    The output directory is left out unless ``with_out``: it does not affect
    results, and CSV headers must not change when a run is redirected.
    """
    lines = []
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            lines.append(f"{section}.{f.name} = {_format(getattr(sub, f.name))}")
    for name in ("strategies", "eval_slots", "seeds") + (("out",) if with_out else ()):
        lines.append(f"{name} = {_format(getattr(cfg, name))}")
    return lines


def parse_lines(lines, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``key = value`` lines on top of ``base``.

    Blank lines and ``#`` comments are skipped, except that a ``# key = value``
    line is read as a setting, so a CSV's header comment can be fed back in.
    """
    base = base or ExperimentConfig()
    updates: dict[str, dict] = {s: {} for s in _SECTIONS}
    top: dict = {}
    top_hints = typing.get_type_hints(ExperimentConfig)
    for raw in lines:
        line = raw.strip()
        if line.startswith("#"):
            line = line.lstrip("#").strip()
        if not line or "=" not in line:
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        section, _, name = key.rpartition(".")
        if section:
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section {section!r} in {key!r}")
            hints = typing.get_type_hints(_SECTIONS[section])
            if name not in hints:
                raise ConfigError(f"unknown key {key!r}")
            updates[section][name] = _coerce(value, hints[name], key)
        else:
            if name in _SECTIONS or name not in top_hints:
                raise ConfigError(f"unknown key {key!r}")
            top[name] = _coerce(value, top_hints[name], key)
    try:
        subs = {s: dataclasses.replace(getattr(base, s), **updates[s]) for s in _SECTIONS}
        return dataclasses.replace(base, **subs, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_lines(Path(path).read_text(encoding="utf-8").splitlines(), base)
