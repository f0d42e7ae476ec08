#!/usr/bin/env python3
"""Benchmark the compiled nearest-centroid kernels against the numpy
fallback across discovery-scale workloads.

Run:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from partkit import kernels
from partkit.cluster import kmeans
from partkit.kernels import pure


def _time(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_assign():
    print(f"selected kernel backend: {kernels.BACKEND}")
    if kernels.BACKEND == "pure":
        print("compiled extension unavailable; comparing pure against itself")
    print("(dispatch sends d > 128 to the BLAS path even when compiled)")
    print()
    print(f"{'n':>8} {'k':>5} {'d':>5} {'selected ms':>12} {'numpy ms':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for n, k, d in [
        (4_096, 2, 18),      # top-level fg/bg split, toy features
        (16_384, 8, 18),     # mid-level parts
        (16_384, 256, 18),   # variant split, toy features
        (8_192, 256, 768),   # variant split, ViT-scale features
        (65_536, 16, 64),
    ]:
        x = rng.normal(size=(n, d))
        c = rng.normal(size=(k, d))
        t_selected = _time(kernels.assign_nearest, x, c)
        t_pure = _time(pure.assign_nearest, x, c)
        l_a, _ = kernels.assign_nearest(x, c)
        l_b, _ = pure.assign_nearest(x, c)
        agree = "(labels agree)" if (l_a == l_b).all() else "(LABELS DIFFER)"
        print(f"{n:>8} {k:>5} {d:>5} {t_selected * 1e3:>12.2f} "
              f"{t_pure * 1e3:>10.2f} {t_pure / t_selected:>7.2f}x {agree}")


def bench_full_fit():
    print()
    print("full k-means fit (300-iteration cap), n=20000 d=18 k=24:")
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20_000, 18))
    t0 = time.perf_counter()
    kmeans(x, 24, seed=0)
    print(f"  selected backend ({kernels.BACKEND}): {time.perf_counter() - t0:.2f}s")


if __name__ == "__main__":
    bench_assign()
    bench_full_fit()
