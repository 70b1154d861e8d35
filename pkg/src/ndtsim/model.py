"""Traffic windowing, the per-twin predictor, local training and metrics.

Model parameters are always a flat ``float64`` vector. For the linear kind the
layout is ``[w_1..w_F, bias]``; for the MLP kind each layer stores its weight
matrix row-major followed by its bias vector, ending with the scalar output
layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class WindowSpec:
    """Recent window ``a``, cyclic window ``b`` and period ``rho`` (intervals)."""

    a: int = 3
    b: int = 1
    rho: int = 24

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("window lengths must be nonnegative")
        if self.a + self.b < 1:
            raise ValueError("a + b must be at least 1")
        if self.rho < 1:
            raise ValueError("rho must be a positive integer")

    @property
    def n_features(self) -> int:
        return self.a + self.b

    @property
    def lookback(self) -> int:
        return max(self.a, self.rho * self.b)


@dataclass(frozen=True)
class SampleSet:
    inputs: np.ndarray  # (z, a+b)
    targets: np.ndarray  # (z,)
    # interval index (0-based) of each target within the source series
    positions: np.ndarray | None = None

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")

    def __len__(self) -> int:
        return len(self.targets)

    def subset(self, mask) -> "SampleSet":
        pos = None if self.positions is None else self.positions[mask]
        return SampleSet(self.inputs[mask], self.targets[mask], pos)


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = "linear"
    hidden: tuple[int, ...] = field(default_factory=lambda: (8,))
    lr: float = 0.001
    batch: int = 64
    local_epochs: int = 1

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if not self.lr >= 0:
            raise ValueError("lr must be nonnegative")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind == "mlp" and (not self.hidden or min(self.hidden) < 1):
            raise ValueError("mlp needs at least one hidden layer of width >= 1")

    def layer_sizes(self, n_features: int) -> list[int]:
        if self.kind == "linear":
            return [n_features, 1]
        return [n_features, *self.hidden, 1]

    def n_params(self, n_features: int) -> int:
        sizes = self.layer_sizes(n_features)
        return sum((i + 1) * o for i, o in zip(sizes[:-1], sizes[1:]))


def build_samples(loads: Sequence[float], w: WindowSpec) -> SampleSet:
    """Turn one traffic series into (window, next value) pairs.

    The input for target ``d[l]`` is ``[d[l-1], ..., d[l-a], d[l-rho], ...,
    d[l-rho*b]]``: the recent window newest-first, then the cyclic window.
    """
    d = np.asarray(loads, dtype=float)
    L = len(d)
    if L < w.a + w.rho * w.b + 1:
        raise ValueError(
            f"series of length {L} too short for window a={w.a}, b={w.b}, rho={w.rho}"
        )
    start = w.lookback
    pos = np.arange(start, L)
    lags = [pos - j for j in range(1, w.a + 1)]
    lags += [pos - w.rho * j for j in range(1, w.b + 1)]
    inputs = np.stack([d[lag] for lag in lags], axis=1)
    return SampleSet(inputs, d[pos].copy(), pos)


def _unpack(params: np.ndarray, sizes: list[int]):
    layers = []
    k = 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        W = params[k : k + i * o].reshape(o, i)
        k += i * o
        b = params[k : k + o]
        k += o
        layers.append((W, b))
    return layers


def _check_dims(params: np.ndarray, cfg: PredictorConfig, n_features: int):
    expected = cfg.n_params(n_features)
    if params.ndim != 1 or params.shape[0] != expected:
        raise ValueError(
            f"parameter vector has shape {params.shape}, expected ({expected},) "
            f"for {cfg.kind} with {n_features} features"
        )


def predict_batch(params, cfg: PredictorConfig, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    params = np.asarray(params, dtype=float)
    _check_dims(params, cfg, X.shape[1])
    if cfg.kind == "linear":
        return X @ params[:-1] + params[-1]
    h = X
    layers = _unpack(params, cfg.layer_sizes(X.shape[1]))
    for W, b in layers[:-1]:
        h = np.tanh(h @ W.T + b)
    W, b = layers[-1]
    return (h @ W.T + b)[:, 0]


def predict(params, cfg: PredictorConfig, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("predict takes a single input vector")
    return float(predict_batch(params, cfg, x[None, :])[0])


def quadratic_loss(pred: float, target: float) -> float:
    return (pred - target) ** 2


def dataset_loss(params, cfg: PredictorConfig, samples: SampleSet) -> float:
    """Mean quadratic loss over a sample set."""
    err = predict_batch(params, cfg, samples.inputs) - samples.targets
    return float(np.mean(err**2))


def loss_gradient(params, cfg: PredictorConfig, X, y) -> np.ndarray:
    """Analytic gradient of the mean quadratic loss over the rows of ``X``."""
    params = np.asarray(params, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    if cfg.kind == "linear":
        r = 2.0 * (X @ params[:-1] + params[-1] - y) / n
        return np.concatenate([X.T @ r, [r.sum()]])

    layers = _unpack(params, cfg.layer_sizes(X.shape[1]))
    acts = [X]
    h = X
    for W, b in layers[:-1]:
        h = np.tanh(h @ W.T + b)
        acts.append(h)
    W_out, b_out = layers[-1]
    out = (h @ W_out.T + b_out)[:, 0]
    delta = (2.0 * (out - y) / n)[:, None]  # (n, 1)

    per_layer = [None] * len(layers)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        per_layer[li] = ((delta.T @ acts[li]).ravel(), delta.sum(axis=0))
        if li > 0:
            delta = (delta @ W) * (1.0 - acts[li] ** 2)
    return np.concatenate([g for pair in per_layer for g in pair])


def init_params(cfg: PredictorConfig, n_features: int, seed: int = 0) -> np.ndarray:
    """Initial global model: zeros for linear, small seeded uniform for MLP."""
    dim = cfg.n_params(n_features)
    if cfg.kind == "linear":
        return np.zeros(dim)
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.1, 0.1, size=dim)


def local_update(params, cfg: PredictorConfig, samples: SampleSet, seed: int) -> np.ndarray:
    """Mini-batch gradient descent from ``params`` on one twin's training data.

    Each epoch visits the samples in a fresh permutation drawn from ``seed``;
    the last short batch is kept. Returns the refined model, not a delta.
    """
    if len(samples) == 0:
        raise ValueError("local_update needs at least one sample")
    theta = np.array(params, dtype=float, copy=True)
    _check_dims(theta, cfg, samples.inputs.shape[1])
    if cfg.lr == 0:
        return theta
    rng = np.random.default_rng(seed)
    X, y = samples.inputs, samples.targets
    z = len(y)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(z)
        for start in range(0, z, cfg.batch):
            idx = order[start : start + cfg.batch]
            theta -= cfg.lr * loss_gradient(theta, cfg, X[idx], y[idx])
    return theta


def evaluate(params, cfg: PredictorConfig, samples: SampleSet, cap: float = 100.0):
    """Return ``(mae, mse)``, each independently capped at ``cap``.

    Non-finite predictions (for example from an exploded model) count as
    errors at the cap.
    """
    if len(samples) == 0:
        raise ValueError("evaluate needs at least one sample")
    if not cap > 0:
        raise ValueError("cap must be positive")
    with np.errstate(all="ignore"):
        err = predict_batch(params, cfg, samples.inputs) - samples.targets
        mae = float(np.mean(np.abs(err)))
        mse = float(np.mean(err**2))
    mae = cap if not np.isfinite(mae) else min(mae, cap)
    mse = cap if not np.isfinite(mse) else min(mse, cap)
    return mae, mse
