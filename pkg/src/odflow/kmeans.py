"""Lloyd's K-means with K-means++ seeding, written for reproducibility.

Determinism contract: identical (points, K, seed, tol, max_iters) produce
bit-identical centers and assignments. Ties in nearest-center assignment
always go to the lowest center index, and empty clusters are re-seeded at
the point currently farthest from its assigned center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansResult:
    centers: np.ndarray          # (K, D)
    assignments: np.ndarray      # (n,) int
    cost: float                  # sum of squared distances to assigned centers
    cost_trace: list[float] = field(default_factory=list)
    n_iters: int = 0
    converged: bool = True
    seed: int = 0


@dataclass
class ScatterReport:
    """Within/between/total squared-distance decomposition of a fit."""

    s_t: float
    s_w: float
    s_b: float


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (points * points).sum(axis=1)[:, None] - 2.0 * points @ centers.T
    d += (centers * centers).sum(axis=1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _nearest(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin breaks ties at the lowest index by construction
    return np.argmin(_squared_distances(points, centers), axis=1)


def _cost(points: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    diff = points - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _member_means(points: np.ndarray, labels: np.ndarray,
                  centers: np.ndarray) -> np.ndarray:
    """Means of each cluster's members; empty clusters keep their center."""
    k = centers.shape[0]
    sums = np.zeros_like(centers)
    np.add.at(sums, labels, points)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    means = centers.copy()
    filled = counts > 0
    means[filled] = sums[filled] / counts[filled, None]
    return means


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = points[first]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1), out=d2)
    return centers


def _fill_empty_clusters(points: np.ndarray, centers: np.ndarray,
                         labels: np.ndarray) -> np.ndarray:
    """Re-seed empty centers at worst-fit points, then re-assign.

    Mutates `centers` in place. With duplicated points a cluster may be
    impossible to fill (ties always resolve to the lowest index); such
    passes stop once they make no progress.
    """
    k = centers.shape[0]
    for _ in range(k):
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return labels
        d_own = np.sum((points - centers[labels]) ** 2, axis=1)
        if float(d_own.max()) <= 0.0:
            return labels  # every point already coincides with its center
        order = np.argsort(-d_own, kind="stable")
        taken: set[int] = set()
        pos = 0
        for cid in empty:
            while pos < len(order) and int(order[pos]) in taken:
                pos += 1
            if pos >= len(order):
                break
            pick = int(order[pos])
            taken.add(pick)
            centers[cid] = points[pick]
            pos += 1
        new_labels = _nearest(points, centers)
        if np.array_equal(new_labels, labels):
            return labels
        labels = new_labels
    return labels


def kmeans(points: np.ndarray, k: int, seed: int = 0,
           max_iters: int = 300, tol: float = 1e-4, n_init: int = 1) -> KMeansResult:
    """Cluster `points` (n, D) into `k` groups minimizing total within-cluster
    squared distance.

    Runs Lloyd iterations from a K-means++ start until the assignment reaches
    a fixed point, the maximum center shift falls below `tol`, or `max_iters`
    is exhausted. The recorded cost trace is non-increasing (asserted), and a
    converged result leaves every point with its nearest center and every
    center at the mean of its members. `n_init > 1` reruns from that many
    derived seeds and keeps the lowest-cost fit (first wins ties).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    n = points.shape[0]
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points n={n}")

    if n_init > 1:
        best = None
        for sub in np.random.SeedSequence(seed).generate_state(n_init):
            result = kmeans(points, k, seed=int(sub), max_iters=max_iters,
                            tol=tol, n_init=1)
            if best is None or result.cost < best.cost:
                best = result
        best.seed = seed
        return best

    rng = np.random.default_rng(seed)
    centers = _plusplus_init(points, k, rng)

    cost_trace: list[float] = []
    labels = _nearest(points, centers)
    labels = _fill_empty_clusters(points, centers, labels)
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        new_centers = _member_means(points, labels, centers)
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers

        new_labels = _nearest(points, centers)
        new_labels = _fill_empty_clusters(points, centers, new_labels)
        cost = _cost(points, centers, new_labels)
        if cost_trace:
            # exact-arithmetic monotonicity, with float rounding headroom
            assert cost <= cost_trace[-1] * (1.0 + 1e-12) + 1e-12, (
                f"Lloyd cost increased: {cost_trace[-1]} -> {cost}")
        cost_trace.append(cost)
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        if shift < tol:
            converged = True
            # tol-based exit: polish to an exact fixed point so that centers
            # are member means and assignments are nearest-center optimal
            while it < max_iters:
                means = _member_means(points, labels, centers)
                if np.array_equal(means, centers):
                    break
                it += 1
                centers = means
                new_labels = _nearest(points, centers)
                new_labels = _fill_empty_clusters(points, centers, new_labels)
                cost_trace.append(_cost(points, centers, new_labels))
                if np.array_equal(new_labels, labels):
                    break
                labels = new_labels
            break

    return KMeansResult(
        centers=centers,
        assignments=labels,
        cost=cost_trace[-1] if cost_trace else _cost(points, centers, labels),
        cost_trace=cost_trace,
        n_iters=it,
        converged=converged,
        seed=seed,
    )


def scatter_report(points: np.ndarray, centers: np.ndarray,
                   labels: np.ndarray) -> ScatterReport:
    """Decompose total scatter S_T into within (S_W) and between (S_B) parts.

    S_W is the K-means cost; S_B weights each center's squared offset from
    the global mean by its member count. S_T = S_W + S_B holds whenever the
    centers are the member means.
    """
    points = np.asarray(points, dtype=np.float64)
    mu = points.mean(axis=0)
    s_t = float(((points - mu) ** 2).sum())
    s_w = _cost(points, centers, labels)
    counts = np.bincount(labels, minlength=centers.shape[0]).astype(np.float64)
    s_b = float((counts[:, None] * (centers - mu) ** 2).sum())
    return ScatterReport(s_t=s_t, s_w=s_w, s_b=s_b)
