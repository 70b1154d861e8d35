"""Percentile-pair estimation for per-dimension trimming.

``g_interp`` maps a value to the percentile of its (interpolated) rank in the
sorted dimension; each estimator produces a ``(lo, hi)`` pair on that scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ESTIMATORS = ("sd", "iqr", "zscore", "ocsvm", "fixed")


@dataclass(frozen=True)
class PercentilePair:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo <= self.hi <= 100.0):
            raise ValueError(f"invalid percentile pair ({self.lo}, {self.hi})")

    def __iter__(self):
        yield self.lo
        yield self.hi


@dataclass(frozen=True)
class DimensionStats:
    mean: float
    sd: float
    q1: float
    q3: float
    sorted_values: np.ndarray

    @classmethod
    def of(cls, values) -> "DimensionStats":
        v = np.sort(np.asarray(values, dtype=float))
        q1, q3 = np.percentile(v, [25, 75])
        return cls(float(v.mean()), float(v.std()), float(q1), float(q3), v)


@dataclass(frozen=True)
class EstimatorConfig:
    method: str = "sd"
    k: float = 3.0
    k_iqr: float = 1.5
    k_z: float = 3.0
    nu: float = 0.1
    gamma: float = 1.0
    fixed_pair: tuple[float, float] = (0.0, 100.0)

    def __post_init__(self):
        if self.method not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.method!r}")
        if self.k < 0 or self.k_iqr < 0 or self.k_z < 0:
            raise ValueError("estimator multipliers must be nonnegative")
        if not 0 < self.nu <= 1:
            raise ValueError("nu must lie in (0, 1]")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        object.__setattr__(self, "fixed_pair", tuple(float(p) for p in self.fixed_pair))
        PercentilePair(*self.fixed_pair)


def _rank_table(sorted_values: np.ndarray):
    """Distinct values and their average 1-based ranks."""
    uniq, first, counts = np.unique(sorted_values, return_index=True, return_counts=True)
    avg_rank = first + (counts + 1) / 2.0
    return uniq, avg_rank


def g_interp(x, sorted_values):
    """Percentile ``(P(x) - 0.5) / N * 100`` of ``x`` against a sorted sample.

    ``P`` is the 1-based rank (tied values share their average rank, values
    between two data points get a linearly interpolated rank). Anything below
    the minimum maps to 0 and anything above the maximum to 100.
    """
    v = np.asarray(sorted_values, dtype=float)
    if v.size == 0:
        raise ValueError("g_interp needs a non-empty sample")
    uniq, ranks = _rank_table(v)
    x_arr = np.asarray(x, dtype=float)
    P = np.interp(x_arr, uniq, ranks)
    g = (P - 0.5) * 100.0 / v.size
    g = np.where(x_arr < uniq[0], 0.0, np.where(x_arr > uniq[-1], 100.0, g))
    g = np.clip(g, 0.0, 100.0)
    return float(g) if np.ndim(g) == 0 else g


class OneClassSVM:
    """One-class SVM with an RBF kernel on scalar samples.

    Solves the dual ``min 1/2 a'Ka`` subject to ``0 <= a_i <= 1/(nu N)`` and
    ``sum(a) = 1`` by pairwise coordinate ascent (second-order pair choice),
    stopping when the violation drops below ``tol``. The decision value is
    ``sum_i a_i K(x_i, x) - rho``; negative means outlier.
    """

    def __init__(self, nu: float = 0.1, gamma: float = 1.0, tol: float = 1e-6, max_iter: int = 10_000):
        self.nu = nu
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def _kernel(self, a, b):
        return np.exp(-self.gamma * (np.asarray(a)[:, None] - np.asarray(b)[None, :]) ** 2)

    def fit(self, x) -> "OneClassSVM":
        x = np.asarray(x, dtype=float).ravel()
        N = x.size
        C = 1.0 / (self.nu * N)
        K = self._kernel(x, x)
        alpha = np.zeros(N)
        n_full = min(int(np.floor(self.nu * N)), N)
        alpha[:n_full] = C
        if n_full < N:
            alpha[n_full] = 1.0 - C * n_full
        G = K @ alpha
        self.n_iter_ = 0
        eps = 1e-12 * C
        for it in range(self.max_iter):
            up = alpha < C - eps
            low = alpha > eps
            if not up.any() or not low.any():
                break
            i = np.flatnonzero(up)[np.argmin(G[up])]
            if G[low].max() - G[i] < self.tol:
                break
            # second-order choice of j: largest guaranteed objective decrease
            cand = np.flatnonzero(low & (G > G[i]))
            gaps = G[cand] - G[i]
            curvs = np.maximum(K[i, i] + K[cand, cand] - 2.0 * K[i, cand], 1e-12)
            j = cand[np.argmax(gaps**2 / curvs)]
            gap = G[j] - G[i]
            curv = K[i, i] + K[j, j] - 2.0 * K[i, j]
            step = gap / curv if curv > 1e-12 else np.inf
            step = min(step, C - alpha[i], alpha[j])
            alpha[i] += step
            alpha[j] -= step
            G += step * (K[:, i] - K[:, j])
            self.n_iter_ = it + 1
            if (it + 1) % 25 == 0:
                alpha, G = self._polish(K, alpha, G, C, eps)
        not_at_bound = alpha < C - eps
        # every point strictly below the upper bound ends up on or inside the boundary
        self.rho_ = float(G[not_at_bound].min()) if not_at_bound.any() else float(G.max())
        sv = alpha > eps
        self.support_ = x[sv]
        self.dual_coef_ = alpha[sv]
        self._train = x
        self._train_G = G
        return self

    def _polish(self, K, alpha, G, C, eps):
        # SMO crawls on near-singular kernels; with the free set known, the
        # optimum solves a small KKT system exactly. Kept only if feasible and better.
        free = (alpha > eps) & (alpha < C - eps)
        nf = int(free.sum())
        if nf == 0:
            return alpha, G
        fixed = ~free
        M = np.zeros((nf + 1, nf + 1))
        M[:nf, :nf] = K[np.ix_(free, free)]
        M[:nf, nf] = -1.0
        M[nf, :nf] = 1.0
        rhs = np.concatenate([-K[np.ix_(free, fixed)] @ alpha[fixed], [1.0 - alpha[fixed].sum()]])
        sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
        a_free = sol[:nf]
        if np.any(a_free < 0) or np.any(a_free > C):
            return alpha, G
        trial = alpha.copy()
        trial[free] = a_free
        if trial @ K @ trial > alpha @ K @ alpha:
            return alpha, G
        return trial, K @ trial

    def decision_function(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        return self._kernel(x, self.support_) @ self.dual_coef_ - self.rho_

    def training_decision(self) -> np.ndarray:
        return self._train_G - self.rho_


def _std(s: np.ndarray) -> float:
    # rescale first: squaring tiny spreads would underflow to a zero variance
    scale = float(np.abs(s).max())
    return scale * float(np.std(s / scale)) if scale > 0 else 0.0


def estimate_pair(values, cfg: EstimatorConfig = EstimatorConfig()) -> PercentilePair:
    """Percentile pair for one dimension's ``n + m`` values."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 3:
        raise ValueError("estimate_pair needs at least 3 values")
    if cfg.method == "fixed":
        return PercentilePair(*cfg.fixed_pair)
    s = np.sort(v)
    if s[0] == s[-1]:
        # a rounded mean could land an ulp outside the single data value
        g0 = g_interp(s[0], s)
        return PercentilePair(g0, g0)
    if cfg.method in ("sd", "zscore"):
        k = cfg.k if cfg.method == "sd" else cfg.k_z
        mean, sd = s.mean(), _std(s)
        lo_b, hi_b = mean - k * sd, mean + k * sd
    elif cfg.method == "iqr":
        q1, q3 = np.percentile(s, [25, 75])
        iqr = q3 - q1
        lo_b, hi_b = q1 - cfg.k_iqr * iqr, q3 + cfg.k_iqr * iqr
    else:
        svm = OneClassSVM(cfg.nu, cfg.gamma).fit(v)
        inliers = v[svm.training_decision() >= 0]
        lo_b, hi_b = inliers.min(), inliers.max()
    lo, hi = g_interp(lo_b, s), g_interp(hi_b, s)
    return PercentilePair(lo, max(lo, hi))
