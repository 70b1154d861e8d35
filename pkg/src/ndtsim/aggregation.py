"""Aggregation rules: inconsistency-weighted trimming plus the baseline rules.

Every rule takes an ``(N, D)`` array of participant models. Stateless rules
are plain functions; FoolsGold and FLAIR carry their state explicitly and are
wrapped by :class:`Aggregator` for round-by-round use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import EstimatorConfig, estimate_pair, g_interp

RULES = ("mean", "median", "trim", "krum", "foolsgold", "faba", "fltrust", "flair", "glid")
FLAIR_DECAY = 0.9
# percentile points; absorbs rounding when a bound lands exactly on a data value
FLAG_TOL = 1e-9


def _stack(models) -> np.ndarray:
    X = np.asarray(models, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("expected a non-empty (N, D) array of models")
    if not np.all(np.isfinite(X)):
        raise ValueError("models must be finite")
    return X


def _ceil_count(frac: float, n: int) -> int:
    # guards ceil(0.2 * 100) == 21 from float error
    return int(math.ceil(frac * n - 1e-9))


def mean_aggregate(models) -> np.ndarray:
    return _stack(models).mean(axis=0)


def median_aggregate(models) -> np.ndarray:
    return np.median(_stack(models), axis=0)


def trimmed_mean_aggregate(models, trim_frac: float = 0.2) -> np.ndarray:
    """Coordinate-wise mean after dropping ``ceil(trim_frac * N)`` values per tail."""
    X = _stack(models)
    if not 0 <= trim_frac < 0.5:
        raise ValueError("trim_frac must lie in [0, 0.5)")
    N = X.shape[0]
    k = min(_ceil_count(trim_frac, N), (N - 1) // 2)
    S = np.sort(X, axis=0)
    return S[k : N - k].mean(axis=0)


def krum_scores(models, f: int) -> np.ndarray:
    X = _stack(models)
    N = X.shape[0]
    if N < f + 3:
        raise ValueError(f"krum needs at least f + 3 = {f + 3} models, got {N}")
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nearest = np.sort(d2, axis=1)[:, : N - f - 2]
    return nearest.sum(axis=1)


def krum_aggregate(models, f: int) -> np.ndarray:
    """The model whose ``N - f - 2`` nearest neighbours are closest (squared distances)."""
    X = _stack(models)
    return X[int(np.argmin(krum_scores(X, f)))].copy()


def faba_aggregate(models, faba_frac: float = 0.2) -> np.ndarray:
    """Repeatedly drop the model farthest from the running mean, then average."""
    X = _stack(models)
    N = X.shape[0]
    n_drop = min(_ceil_count(faba_frac, N), N - 1)
    keep = list(range(N))
    for _ in range(n_drop):
        mu = X[keep].mean(axis=0)
        dist = np.linalg.norm(X[keep] - mu, axis=1)
        keep.pop(int(np.argmax(dist)))
    return X[keep].mean(axis=0)


def _cosine_matrix(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    U = V / safe[:, None]
    cs = U @ U.T
    cs[norms == 0, :] = 0.0
    cs[:, norms == 0] = 0.0
    return cs


def foolsgold_weights(histories) -> np.ndarray:
    """FoolsGold participant weights from cumulative update vectors."""
    H = np.asarray(histories, dtype=float)
    N = H.shape[0]
    if N == 1:
        return np.ones(1)
    cs = _cosine_matrix(H)
    np.fill_diagonal(cs, -np.inf)
    maxcs = cs.max(axis=1)
    np.fill_diagonal(cs, 0.0)
    # pardoning: damp similarity towards participants that look more honest
    for i in range(N):
        for j in range(N):
            if i != j and maxcs[i] < maxcs[j] and maxcs[j] > 0:
                cs[i, j] *= maxcs[i] / maxcs[j]
    np.fill_diagonal(cs, -np.inf)
    wv = np.clip(1.0 - cs.max(axis=1), 0.0, 1.0)
    if wv.max() <= 0:
        return np.full(N, 1.0 / N)
    wv = wv / wv.max()
    wv[wv == 1.0] = 0.99
    with np.errstate(divide="ignore"):
        wv = np.log(wv / (1.0 - wv)) + 0.5
    wv[np.isposinf(wv) | (wv > 1)] = 1.0
    wv[~np.isfinite(wv) | (wv < 0)] = 0.0
    if wv.sum() <= 0:
        return np.full(N, 1.0 / N)
    return wv / wv.sum()


def foolsgold_aggregate(models, histories) -> np.ndarray:
    X = _stack(models)
    w = foolsgold_weights(histories)
    return w @ X


def fltrust_aggregate(models, server_model, prior) -> np.ndarray:
    """Trust-weighted, norm-matched updates relative to ``prior``.

    Trust is the clipped cosine between each update and the server's update
    from its root data; zero total trust leaves ``prior`` unchanged.
    """
    X = _stack(models)
    prior = np.asarray(prior, dtype=float)
    U = X - prior
    s = np.asarray(server_model, dtype=float) - prior
    s_norm = np.linalg.norm(s)
    norms = np.linalg.norm(U, axis=1)
    if s_norm == 0:
        return prior.copy()
    cos = np.where(norms > 0, U @ s / (np.where(norms > 0, norms, 1.0) * s_norm), 0.0)
    trust = np.maximum(cos, 0.0)
    if trust.sum() <= 0:
        return prior.copy()
    scaled = U * (s_norm / np.where(norms > 0, norms, 1.0))[:, None]
    return prior + trust @ scaled / trust.sum()


def flip_scores(updates, prev_global_update) -> np.ndarray:
    U = np.asarray(updates, dtype=float)
    ref = np.sign(np.asarray(prev_global_update, dtype=float))
    su = np.sign(U)
    flipped = (su != 0) & (ref != 0) & (su != ref)
    return (np.abs(U) * flipped).sum(axis=1)


def flair_aggregate(models, prior, prev_global_update, suspicion):
    """Suspicion-weighted mean of updates; returns ``(model, new_suspicion)``.

    Flip-scores (update mass pointing against the previous global update) are
    normalized by their maximum and accumulated with decay 0.9; weights are a
    softmax of negative suspicion.
    """
    X = _stack(models)
    prior = np.asarray(prior, dtype=float)
    U = X - prior
    fs = flip_scores(U, prev_global_update)
    top = fs.max()
    norm_fs = fs / top if top > 0 else np.zeros_like(fs)
    susp = FLAIR_DECAY * np.asarray(suspicion, dtype=float) + norm_fs
    z = -susp - (-susp).max()
    w = np.exp(z)
    w /= w.sum()
    return prior + w @ U, susp


def _weight_floor(sd: float) -> float:
    return max(1e-8, 1e-6 * sd)


def glid_aggregate(models, est: EstimatorConfig = EstimatorConfig(), weight_floor: bool = True):
    """Per-dimension percentile trimming with inverse-deviation weights.

    For each dimension, values whose percentile (see :func:`g_interp`) falls
    outside the estimated pair get weight 0; the rest are averaged with
    weights ``sd / |value - mean|`` where mean and sd cover all participants,
    so a trimmed value still shifts the reference point of the weights.
    A dimension with every value flagged falls back to its median.

    Returns ``(global_model, flags)`` with ``flags[i, d]`` true when
    participant ``i`` was trimmed in dimension ``d``.
    """
    X = _stack(models)
    N, D = X.shape
    if N < 3:
        raise ValueError("glid needs at least 3 models")
    out = np.empty(D)
    flags = np.zeros((N, D), dtype=bool)
    for d in range(D):
        v = X[:, d]
        pair = estimate_pair(v, est)
        g = g_interp(v, np.sort(v))
        lo, hi = pair.lo - FLAG_TOL, pair.hi + FLAG_TOL
        if est.method == "fixed" and pair.hi > pair.lo:
            # a fixed pair trims values sitting on its upper percentile
            bad = (g < lo) | ((g >= pair.hi - FLAG_TOL) & (pair.hi < 100.0))
        else:
            bad = (g < lo) | (g > hi)
        flags[:, d] = bad
        keep = ~bad
        if not keep.any():
            out[d] = np.median(v)
            continue
        kept = v[keep]
        mean, sd = v.mean(), v.std()
        dev = np.abs(kept - mean)
        if sd == 0:
            w = np.ones(keep.sum())
        else:
            w = sd / (np.maximum(dev, _weight_floor(sd)) if weight_floor else dev)
        out[d] = w @ kept / w.sum()
    return out, flags


@dataclass(frozen=True)
class AggregatorConfig:
    rule: str = "mean"
    trim_frac: float = 0.2
    faba_frac: float = 0.2
    krum_f: int | None = None
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    weight_floor: bool = True

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown aggregation rule {self.rule!r}")
        if not 0 <= self.trim_frac < 0.5:
            raise ValueError("trim_frac must lie in [0, 0.5)")
        if not 0 <= self.faba_frac < 1:
            raise ValueError("faba_frac must lie in [0, 1)")
        if self.krum_f is not None and self.krum_f < 0:
            raise ValueError("krum_f must be nonnegative")


@dataclass
class Aggregator:
    """One aggregation site (a cluster or the global tier) with its own state."""

    cfg: AggregatorConfig
    fg_history: dict = field(default_factory=dict)
    suspicion: dict = field(default_factory=dict)

    def __call__(self, models, ids, prior, *, server_model=None, prev_global_update=None,
                 expected_bad: int = 0):
        """Aggregate ``models`` whose participant identities are ``ids``.

        Returns ``(model, flags)``; ``flags`` is an ``(N, D)`` boolean array
        for the inconsistency rule and ``None`` otherwise.
        """
        X = _stack(models)
        prior = np.asarray(prior, dtype=float)
        rule = self.cfg.rule
        if rule == "mean":
            return mean_aggregate(X), None
        if rule == "median":
            return median_aggregate(X), None
        if rule == "trim":
            return trimmed_mean_aggregate(X, self.cfg.trim_frac), None
        if rule == "faba":
            return faba_aggregate(X, self.cfg.faba_frac), None
        if rule == "krum":
            f = self.cfg.krum_f if self.cfg.krum_f is not None else expected_bad
            f = max(0, min(f, X.shape[0] - 3))
            if X.shape[0] < 3:
                return mean_aggregate(X), None
            return krum_aggregate(X, f), None
        if rule == "glid":
            if X.shape[0] < 3:
                return median_aggregate(X), np.zeros(X.shape, dtype=bool)
            return glid_aggregate(X, self.cfg.estimator, self.cfg.weight_floor)
        if rule == "foolsgold":
            H = []
            for pid, x in zip(ids, X):
                self.fg_history[pid] = self.fg_history.get(pid, 0.0) + (x - prior)
                H.append(self.fg_history[pid])
            return foolsgold_aggregate(X, np.array(H)), None
        if rule == "fltrust":
            if server_model is None:
                raise ValueError("fltrust needs the server's root-data model")
            return fltrust_aggregate(X, server_model, prior), None
        # flair
        prev = np.zeros_like(prior) if prev_global_update is None else prev_global_update
        susp = np.array([self.suspicion.get(pid, 0.0) for pid in ids])
        out, susp = flair_aggregate(X, prior, prev, susp)
        for pid, s in zip(ids, susp):
            self.suspicion[pid] = float(s)
        return out, None
