"""Numpy fallback for the nearest-centroid kernels.

Same signatures and semantics as the compiled module. Distances use the
expanded form ||x||^2 - 2 x.c + ||c||^2 (BLAS matmul), clamped at zero;
the compiled path accumulates (x-c)^2 directly. Label ties resolve to the
lowest centroid index in both.
"""

import numpy as np

BACKEND = "pure"


def assign_nearest(points, centroids, chunk=16384):
    """Assign each row of `points` to its nearest centroid.

    points: (n, d) float64 C-contiguous. centroids: (k, d) float64.
    Returns (labels int64 (n,), squared distances float64 (n,)).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    c_sq = np.einsum("kd,kd->k", centroids, centroids)
    for start in range(0, n, chunk):
        x = points[start : start + chunk]
        d2 = x @ centroids.T
        d2 *= -2.0
        d2 += c_sq[np.newaxis, :]
        d2 += np.einsum("nd,nd->n", x, x)[:, np.newaxis]
        np.maximum(d2, 0.0, out=d2)
        lab = np.argmin(d2, axis=1)
        labels[start : start + x.shape[0]] = lab
        dists[start : start + x.shape[0]] = d2[np.arange(x.shape[0]), lab]
    return labels, dists


def accumulate_means(points, labels, k):
    """Per-label sums and counts for the k-means update step.

    Returns (sums float64 (k, d), counts int64 (k,)).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    sums = np.zeros((k, points.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, points)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts
