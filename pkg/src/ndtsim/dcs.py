"""Dynamic connectivity segmentation: pairwise twin affinity and clustering."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

DISTANCE_FLOOR_M = 1.0
RESTARTS = 8


@dataclass(frozen=True)
class NodeAttributes:
    x: float
    y: float
    backhaul_capacity: float  # Mbps
    coverage_radius: float  # meters
    freq_histogram: np.ndarray

    def __post_init__(self):
        if not self.coverage_radius > 0:
            raise ValueError("coverage_radius must be positive")
        if not self.backhaul_capacity > 0:
            raise ValueError("backhaul_capacity must be positive")
        h = np.asarray(self.freq_histogram, dtype=float)
        if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
            raise ValueError("freq_histogram must be nonnegative and sum to 1")
        object.__setattr__(self, "freq_histogram", h)


@dataclass(frozen=True)
class AffinityWeights:
    w_g: float = 1.0
    w_k: float = 1.0
    w_beta: float = 1.0
    w_tau: float = 1.0

    def __post_init__(self):
        ws = (self.w_g, self.w_k, self.w_beta, self.w_tau)
        if min(ws) < 0 or max(ws) <= 0:
            raise ValueError("affinity weights must be nonnegative with one positive")


def disk_overlap_area(r1: float, r2: float, dist: float) -> float:
    """Area of intersection of two disks with radii r1, r2 and center distance dist."""
    if dist >= r1 + r2:
        return 0.0
    if dist <= abs(r1 - r2):
        return math.pi * min(r1, r2) ** 2
    a1 = r1 * r1 * math.acos((dist * dist + r1 * r1 - r2 * r2) / (2 * dist * r1))
    a2 = r2 * r2 * math.acos((dist * dist + r2 * r2 - r1 * r1) / (2 * dist * r2))
    tri = 0.5 * math.sqrt(
        max(0.0, (-dist + r1 + r2) * (dist + r1 - r2) * (dist - r1 + r2) * (dist + r1 + r2))
    )
    return a1 + a2 - tri


def pair_similarities(a1: NodeAttributes, a2: NodeAttributes):
    """Return ``(g, k, beta, tau)`` for two twins.

    g: center distance in meters, floored at 1 m. k: backhaul capacity ratio
    min/max. beta: coverage-disk overlap over the smaller disk's area. tau:
    cosine similarity of the frequency histograms.
    """
    dist = math.hypot(a1.x - a2.x, a1.y - a2.y)
    g = max(dist, DISTANCE_FLOOR_M)
    c1, c2 = a1.backhaul_capacity, a2.backhaul_capacity
    k = min(c1, c2) / max(c1, c2)
    r_small = min(a1.coverage_radius, a2.coverage_radius)
    beta = disk_overlap_area(a1.coverage_radius, a2.coverage_radius, dist) / (math.pi * r_small**2)
    beta = min(max(beta, 0.0), 1.0)
    h1, h2 = a1.freq_histogram, a2.freq_histogram
    denom = float(np.linalg.norm(h1) * np.linalg.norm(h2))
    tau = 0.0 if denom == 0 else float(np.clip(h1 @ h2 / denom, 0.0, 1.0))
    return g, k, beta, tau


def affinity_from_terms(g, k, beta, tau, w: AffinityWeights = AffinityWeights()) -> float:
    return w.w_g / g + w.w_k * k + w.w_beta * beta + w.w_tau * tau


def affinity(a1: NodeAttributes, a2: NodeAttributes, w: AffinityWeights = AffinityWeights()) -> float:
    return affinity_from_terms(*pair_similarities(a1, a2), w)


def affinity_matrix(nodes: list[NodeAttributes], w: AffinityWeights = AffinityWeights()) -> np.ndarray:
    M = len(nodes)
    A = np.zeros((M, M))
    for i in range(M):
        for j in range(i + 1, M):
            A[i, j] = A[j, i] = affinity(nodes[i], nodes[j], w)
    return A


def cluster(A, C: int, refine: bool = True) -> np.ndarray:
    """Average-linkage agglomerative merging on an affinity matrix.

    Repeatedly merges the pair of clusters with the highest mean cross
    affinity until ``C`` remain; ties go to the lowest index pair. With
    ``refine`` the result is then polished by local search (node moves and
    swaps) on the mean within-cluster affinity, also tried from a few seeded
    random partitions. Returns labels in ``[0, C)``, numbered by
    each cluster's smallest member.
    """
    A = np.asarray(A, dtype=float)
    M = A.shape[0]
    if A.shape != (M, M) or not np.allclose(A, A.T):
        raise ValueError("affinity matrix must be square and symmetric")
    if not 1 <= C <= M:
        raise ValueError(f"cannot form {C} clusters from {M} nodes")

    members = [[i] for i in range(M)]
    # link[i, j] = summed cross affinity between active clusters i and j
    link = A.copy()
    np.fill_diagonal(link, -np.inf)
    sizes = np.ones(M)
    active = np.ones(M, dtype=bool)
    while active.sum() > C:
        idx = np.flatnonzero(active)
        sub = link[np.ix_(idx, idx)] / np.outer(sizes[idx], sizes[idx])
        iu = np.triu_indices(len(idx), k=1)
        vals = sub[iu]
        best = int(np.argmax(vals))  # first max in row-major order = lowest pair
        i, j = idx[iu[0][best]], idx[iu[1][best]]
        members[i] += members[j]
        members[j] = []
        link[i, :] += link[j, :]
        link[:, i] += link[:, j]
        link[i, i] = -np.inf
        sizes[i] += sizes[j]
        active[j] = False
        link[j, :] = -np.inf
        link[:, j] = -np.inf

    labels = np.empty(M, dtype=int)
    for c, i in enumerate(np.flatnonzero(active)):
        labels[members[i]] = c
    if refine and 1 < C < M:
        labels = _best_of_starts(A, labels, C, RESTARTS)
    return _canonical(labels)


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters by their smallest member."""
    order = {}
    for lab in labels:
        order.setdefault(int(lab), len(order))
    return np.array([order[int(lab)] for lab in labels])


def _refine(A: np.ndarray, labels: np.ndarray, C: int, max_passes: int = 1000) -> np.ndarray:
    """Local search on :func:`within_affinity`: best single-node move, else best swap.

    The objective is ``S / P`` (summed and counted same-cluster pairs), so each
    candidate's effect follows from node-to-cluster affinity sums in O(1).
    Stops at a local optimum; a move never empties a cluster.
    """
    A = A.copy()
    np.fill_diagonal(A, 0.0)
    M = len(labels)
    labels = labels.copy()
    for _ in range(max_passes):
        onehot = np.eye(C)[labels]
        R = A @ onehot  # R[i, c] = affinity of i to members of c
        sizes = onehot.sum(axis=0)
        S = 0.5 * float((R * onehot).sum())
        P = 0.5 * float((sizes * (sizes - 1)).sum())
        cur = S / P if P > 0 else 0.0
        own = R[np.arange(M), labels]
        # move i from its cluster a to c
        dS = R - own[:, None]
        dP = sizes[None, :] - (sizes[labels] - 1)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(P + dP > 0, (S + dS) / (P + dP), 0.0)
        val[np.arange(M), labels] = -np.inf
        val[sizes[labels] == 1, :] = -np.inf
        i, c = np.unravel_index(int(np.argmax(val)), val.shape)
        if val[i, c] > cur + 1e-12:
            labels[i] = c
            continue
        # swap i (in a) with j (in b): pair counts are unchanged
        Ra = R[:, labels]  # Ra[i, j] = affinity of i to j's cluster
        gain = (Ra - own[:, None]) + (Ra.T - own[None, :]) - 2.0 * A
        gain[labels[:, None] == labels[None, :]] = -np.inf
        i, j = np.unravel_index(int(np.argmax(gain)), gain.shape)
        if P > 0 and gain[i, j] / P > 1e-12:
            labels[i], labels[j] = labels[j], labels[i]
            continue
        break
    return labels


def _best_of_starts(A: np.ndarray, labels: np.ndarray, C: int, restarts: int) -> np.ndarray:
    """Refine the agglomerative labels and a few seeded random partitions; keep the best."""
    best = _refine(A, labels, C)
    best_val = within_affinity(A, best)
    rng = np.random.default_rng(0)
    M = len(labels)
    for _ in range(restarts):
        start = np.concatenate([np.arange(C), rng.integers(0, C, size=M - C)])
        cand = _refine(A, rng.permutation(start), C)
        val = within_affinity(A, cand)
        if val > best_val + 1e-12:
            best, best_val = cand, val
    return best


def within_affinity(A, labels) -> float:
    """Mean pairwise affinity over same-cluster pairs (the clustering objective)."""
    A = np.asarray(A, dtype=float)
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    if not same.any():
        return 0.0
    return float(A[same].mean())


def synth_attributes(num: int, seed: int, n_hist_bins: int = 8, n_sites: int = 4,
                     site_spread_m: float = 400.0, area_m: float = 5000.0) -> list[NodeAttributes]:
    """Seeded twin attributes scattered around a few sites.

    Twins at one site share a base histogram and capacity class, so the
    affinity-based clustering has structure to find.
    """
    rng = np.random.default_rng([seed, 7919])
    centers = rng.uniform(0, area_m, size=(n_sites, 2))
    site_hist = rng.dirichlet(np.ones(n_hist_bins), size=n_sites)
    site_cap = rng.choice([100.0, 1000.0, 10000.0], size=n_sites)
    nodes = []
    for i in range(num):
        s = i % n_sites
        x, y = centers[s] + rng.normal(0, site_spread_m, size=2)
        hist = site_hist[s] + rng.dirichlet(np.ones(n_hist_bins)) * 0.1
        nodes.append(
            NodeAttributes(
                float(x),
                float(y),
                float(site_cap[s] * rng.uniform(0.8, 1.25)),
                235.0,
                hist / hist.sum(),
            )
        )
    return nodes


def load_attributes_csv(path, delimiter: str = ",") -> dict[str, NodeAttributes]:
    """Read ``id, x, y, capacity, radius, h0, h1, ...`` rows (header line required).

    Histogram bins are renormalized to sum to 1.
    """
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ndt_id = row[0].strip()
                x, y, cap, rad = (float(v) for v in row[1:5])
                hist = np.array([float(v) for v in row[5:]])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: cannot parse row ({exc})") from None
            if hist.size == 0 or hist.sum() <= 0:
                raise ValueError(f"{path}:{lineno}: histogram bins missing or all zero")
            out[ndt_id] = NodeAttributes(x, y, cap, rad, hist / hist.sum())
    return out
