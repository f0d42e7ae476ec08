"""Seeded k-means on patch embeddings.

Lloyd iterations over the kernels module (compiled or numpy), k-means++
initialization, at most 300 iterations, and a relative-inertia stopping
rule of 1e-4. Identical inputs and seed give identical assignments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InputError


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, d) float64
    labels: np.ndarray  # (n,) int64
    inertia: float
    n_iter: int


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    _, closest = kernels.assign_nearest(x, centroids[:1])
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining points coincide with chosen centroids
            centroids[i:] = x[int(rng.integers(n))]
            break
        probs = closest / total
        idx = int(rng.choice(n, p=probs))
        centroids[i] = x[idx]
        _, d_new = kernels.assign_nearest(x, centroids[i : i + 1])
        np.minimum(closest, d_new, out=closest)
    return centroids


def kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = 300,
           tol: float = 1e-4) -> KMeansResult:
    """Cluster rows of x into k groups. Deterministic given (x, k, seed)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"expected (n, d) data, got shape {x.shape}")
    n = x.shape[0]
    if n < k:
        raise InputError(f"cannot fit {k} clusters on {n} points")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(x, k, rng)
    prev_inertia = np.inf
    labels = np.zeros(n, dtype=np.int64)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        labels, sq = kernels.assign_nearest(x, centroids)
        inertia = float(sq.sum())
        sums, counts = kernels.accumulate_means(x, labels, k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # reseed each empty cluster at the point farthest from its centroid
            order = np.argsort(sq)[::-1]
            for j, cluster in enumerate(empty):
                pick = int(order[j % n])
                sums[cluster] = x[pick]
                counts[cluster] = 1
        centroids = sums / counts[:, np.newaxis]
        if np.isfinite(prev_inertia) and prev_inertia > 0.0:
            if abs(prev_inertia - inertia) <= tol * prev_inertia:
                prev_inertia = inertia
                break
        if inertia == 0.0:
            prev_inertia = inertia
            break
        prev_inertia = inertia
    labels, sq = kernels.assign_nearest(x, centroids)
    return KMeansResult(centroids, labels, float(sq.sum()), n_iter)
