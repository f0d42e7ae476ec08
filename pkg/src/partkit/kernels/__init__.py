"""Nearest-centroid kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when importable; set PARTKIT_PURE=1 to
force the numpy path (the benchmark compares both). Even with the
extension loaded, wide feature vectors route to the BLAS-backed fallback,
which wins past ~128 dims.
"""

import os

from . import pure as _pure

_BLAS_WIDTH = 128

if os.environ.get("PARTKIT_PURE", "0") not in ("", "0"):
    _impl = _pure
else:
    try:
        from . import _nearest as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND


def assign_nearest(points, centroids):
    if BACKEND == "compiled" and points.shape[1] > _BLAS_WIDTH:
        return _pure.assign_nearest(points, centroids)
    return _impl.assign_nearest(points, centroids)


accumulate_means = _impl.accumulate_means

__all__ = ["BACKEND", "assign_nearest", "accumulate_means"]
