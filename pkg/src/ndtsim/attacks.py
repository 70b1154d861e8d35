"""Malicious local models for injected fake twins.

Every crafting function returns an ``(m, D)`` array of fake models built only
from what the minimal-knowledge attacker sees: the initial global model, the
current global model and the history of past globals.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

TRIM_ZERO_PUSH = 1e-3
ATTACK_KINDS = ("none", "fti", "trim", "history", "random", "mpaf", "zheng")


@dataclass(frozen=True)
class AttackState:
    """Evolving state of the FTI attacker across global rounds."""

    eta: float
    step: float
    pre_dist: float
    base_model: np.ndarray
    initial_eta: float

    @classmethod
    def start(cls, eta0: float, base_model) -> "AttackState":
        return cls(float(eta0), float(eta0), -1.0, np.asarray(base_model, dtype=float), float(eta0))


def _as_vec(v) -> np.ndarray:
    return np.asarray(v, dtype=float).ravel()


def _same_dim(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _copies(v: np.ndarray, m: int) -> np.ndarray:
    if m < 0:
        raise ValueError("number of fake models must be nonnegative")
    return np.tile(v, (m, 1))


def fti_fake(eta: float, base, global_) -> np.ndarray:
    """``eta * base - (eta - 1) * global``."""
    base, global_ = _as_vec(base), _as_vec(global_)
    return eta * base - (eta - 1.0) * global_


def fti_round(state: AttackState, global_, m: int):
    """One FTI adaptation against the current global model.

    Builds the fake models with the current ``eta``, measures their distance
    to the global model, then moves ``eta`` up by half a step if that distance
    grew since the previous round (down otherwise) and halves the step.
    """
    global_ = _as_vec(global_)
    _same_dim(state.base_model, global_)
    if m < 1:
        raise ValueError("fti_round needs at least one fake model")
    fake = fti_fake(state.eta, state.base_model, global_)
    dist = float(np.linalg.norm(fake - global_))
    eta = state.eta + state.step / 2 if state.pre_dist < dist else state.eta - state.step / 2
    new_state = replace(state, eta=eta, step=state.step / 2, pre_dist=dist)
    return _copies(fake, m), new_state


def fti_inner_loop(state: AttackState, global_, m: int, R: int):
    """R literal adaptation steps against one frozen global model.

    Returns the fake models produced by the last step and the final state.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    fakes = None
    for _ in range(R):
        fakes, state = fti_round(state, global_, m)
    return fakes, state


def trim_attack(global_, scale: float, m: int) -> np.ndarray:
    """Push every coordinate against its own sign by ``scale`` times its size."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    g = _as_vec(global_)
    fake = np.where(np.abs(g) > 0, g - scale * np.sign(g) * np.abs(g), -scale * TRIM_ZERO_PUSH)
    return _copies(fake, m)


def history_attack(history: Sequence, scale: float, m: int) -> np.ndarray:
    """Scale the most recent previous global model."""
    if len(history) == 0:
        raise ValueError("history must contain at least the initial model")
    return _copies(scale * _as_vec(history[-1]), m)


def random_attack(dim: int, scale: float, seed: int, m: int) -> np.ndarray:
    """Independent ``scale * N(0, I)`` draws, one generator per fake index."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if m == 0:
        return np.zeros((0, dim))
    return np.stack([scale * np.random.default_rng([seed, i]).standard_normal(dim) for i in range(m)])


def mpaf_attack(initial, global_, scale: float, m: int) -> np.ndarray:
    """``global + scale * (initial - global)``."""
    initial, global_ = _as_vec(initial), _as_vec(global_)
    _same_dim(initial, global_)
    return _copies(global_ + scale * (initial - global_), m)


def zheng_attack(prev_global_update, global_, scale: float, m: int) -> np.ndarray:
    """``global - scale * (previous global update)``.

    Only the direction-inversion core; the error-maximizing refinement needs
    training data the fake twins do not have.
    """
    delta, global_ = _as_vec(prev_global_update), _as_vec(global_)
    _same_dim(delta, global_)
    return _copies(global_ - scale * delta, m)


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "fti"
    scale: float = 1000.0
    eta0: float = 10.0
    seed: int = 0
    # "initial" uses the initial global model as the FTI base; a list gives one explicitly
    base: str | list = "initial"
    jitter_sd: float = 0.0
    # >0 switches FTI to R literal adaptation steps per round against a frozen global
    inner_loop: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("attack scale must be positive")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.jitter_sd < 0:
            raise ValueError("jitter_sd must be nonnegative")
        if self.inner_loop < 0:
            raise ValueError("inner_loop must be nonnegative")


@dataclass
class Attacker:
    """Owns the attack configuration and the FTI state across rounds."""

    cfg: AttackConfig
    initial: np.ndarray
    state: AttackState | None = None
    calls: int = 0
    last_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.initial = _as_vec(self.initial)
        if self.cfg.kind == "fti":
            base = self.initial if self.cfg.base == "initial" else _as_vec(self.cfg.base)
            _same_dim(base, self.initial)
            self.state = AttackState.start(self.cfg.eta0, base)

    def craft(self, global_, history: Sequence, m: int) -> np.ndarray:
        """Fake models for this round; ``history`` holds the globals before ``global_``."""
        global_ = _as_vec(global_)
        kind, scale = self.cfg.kind, self.cfg.scale
        round_seed = [self.cfg.seed, self.calls]
        self.calls += 1
        if m == 0 or kind == "none":
            self.last_params = {}
            return np.zeros((0, global_.size))
        if kind == "fti":
            eta, step = self.state.eta, self.state.step
            if self.cfg.inner_loop:
                fakes, self.state = fti_inner_loop(self.state, global_, m, self.cfg.inner_loop)
            else:
                fakes, self.state = fti_round(self.state, global_, m)
            self.last_params = {"eta": eta, "step": step}
        elif kind == "trim":
            fakes = trim_attack(global_, scale, m)
        elif kind == "history":
            fakes = history_attack(list(history) or [self.initial], scale, m)
        elif kind == "random":
            seed = int(np.random.SeedSequence(round_seed).generate_state(1)[0])
            fakes = random_attack(global_.size, scale, seed, m)
        elif kind == "mpaf":
            fakes = mpaf_attack(self.initial, global_, scale, m)
        else:
            prev = _as_vec(history[-1]) if len(history) else global_
            fakes = zheng_attack(global_ - prev, global_, scale, m)
        if kind != "fti":
            self.last_params = {"scale": scale}
        if self.cfg.jitter_sd > 0:
            rng = np.random.default_rng([*round_seed, 1])
            fakes = fakes + rng.normal(0.0, self.cfg.jitter_sd, size=fakes.shape)
        return fakes
