# cython: language_level=3
# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled nearest-centroid kernels (hot loop of clustering and tagging)."""

import numpy as np

cimport cython
from cython.parallel cimport prange
from libc.math cimport INFINITY

BACKEND = "compiled"


cdef double _sqdist(const double* a, const double* b, Py_ssize_t d) noexcept nogil:
    cdef double acc = 0.0
    cdef double diff
    cdef Py_ssize_t j
    for j in range(d):
        diff = a[j] - b[j]
        acc += diff * diff
    return acc


def assign_nearest(points, centroids):
    """Assign each row of `points` to its nearest centroid.

    points: (n, d) float64. centroids: (k, d) float64.
    Returns (labels int64 (n,), squared distances float64 (n,)).
    Ties resolve to the lowest centroid index.
    """
    cdef double[:, ::1] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(centroids, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t k = c.shape[0]
    if c.shape[1] != d:
        raise ValueError("points and centroids dimensionality differ")
    labels_arr = np.empty(n, dtype=np.int64)
    dists_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] labels = labels_arr
    cdef double[::1] dists = dists_arr
    cdef Py_ssize_t i, j
    cdef double best, cur
    cdef long long best_j
    for i in prange(n, nogil=True, schedule="static"):
        best = INFINITY
        best_j = 0
        for j in range(k):
            cur = _sqdist(&x[i, 0], &c[j, 0], d)
            if cur < best:
                best = cur
                best_j = j
        labels[i] = best_j
        dists[i] = best
    return labels_arr, dists_arr


def accumulate_means(points, labels, Py_ssize_t k):
    """Per-label sums and counts for the k-means update step."""
    cdef double[:, ::1] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef long long[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    sums_arr = np.zeros((k, d), dtype=np.float64)
    counts_arr = np.zeros(k, dtype=np.int64)
    cdef double[:, ::1] sums = sums_arr
    cdef long long[::1] counts = counts_arr
    cdef Py_ssize_t i, j
    cdef long long li
    for i in range(n):
        li = lab[i]
        counts[li] += 1
        for j in range(d):
            sums[li, j] += x[i, j]
    return sums_arr, counts_arr
