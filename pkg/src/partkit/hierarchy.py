"""Three-tier semantic hierarchy over patch features.

Level 1 splits all patches into foreground/background (k=2), level 2
splits foreground patches into M part clusters, level 3 splits each part
cluster and the background cluster into K variants. The fitted model is
immutable and safe to share across readers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import kmeans
from .errors import ConfigError, InputError, StateError
from .features import ExtractorSpec, FeatureGrid

BACKGROUND_TOP = 0  # index of the background centroid within fg_bg_centroids


@dataclass
class PartHierarchy:
    """Fitted clustering model. Centroids are canonical float32.

    fg_bg_centroids: (2, D) with row 0 = background, row 1 = foreground.
    part_centroids: (M, D); part slot m uses row m-1.
    sub_centroids: (M+1, K, D); group 0 holds background styles.
    """

    fg_bg_centroids: np.ndarray
    part_centroids: np.ndarray
    sub_centroids: np.ndarray
    M: int
    K: int
    seed: int
    extractor: ExtractorSpec

    def __post_init__(self):
        self.fg_bg_centroids = np.asarray(self.fg_bg_centroids, dtype=np.float32)
        self.part_centroids = np.asarray(self.part_centroids, dtype=np.float32)
        self.sub_centroids = np.asarray(self.sub_centroids, dtype=np.float32)

    @property
    def dim(self) -> int:
        return int(self.fg_bg_centroids.shape[1])

    def validate(self) -> None:
        if self.fg_bg_centroids.shape != (2, self.dim):
            raise StateError("hierarchy missing the two top-level centroids")
        if self.part_centroids.shape != (self.M, self.dim):
            raise StateError(
                f"expected {self.M} part centroids, got {self.part_centroids.shape}"
            )
        if self.sub_centroids.shape != (self.M + 1, self.K, self.dim):
            raise StateError(
                f"expected ({self.M + 1}, {self.K}, D) sub-centroids, "
                f"got {self.sub_centroids.shape}"
            )
        for arr in (self.fg_bg_centroids, self.part_centroids, self.sub_centroids):
            if not np.isfinite(arr).all():
                raise StateError("hierarchy centroids contain non-finite values")

    def code_centroid(self, slot: int, variant: int) -> np.ndarray:
        """Sub-centroid vector for one (slot, variant) code."""
        if not 0 <= slot <= self.M or not 1 <= variant <= self.K:
            raise InputError(f"unknown code ({slot},{variant}) for M={self.M} K={self.K}")
        return self.sub_centroids[slot, variant - 1]


def _border_mask(h: int, w: int) -> np.ndarray:
    m = np.zeros((h, w), dtype=bool)
    m[0, :] = m[-1, :] = True
    m[:, 0] = m[:, -1] = True
    return m.reshape(-1)


def validate_hierarchy_params(n_patches: int, M: int, K: int) -> None:
    if n_patches == 0:
        raise InputError("empty feature corpus")
    if M < 1 or K < 1:
        raise InputError(f"M and K must be >= 1, got M={M} K={K}")
    if n_patches < max(2, M, K):
        raise InputError(
            f"{n_patches} patches cannot support M={M}, K={K} clustering"
        )


def fit_hierarchy(features: list[FeatureGrid], M: int, K: int, seed: int,
                  extractor: ExtractorSpec | None = None) -> PartHierarchy:
    """Fit the three-tier hierarchy on a feature corpus.

    Background is the top-level cluster holding the majority of
    image-border patches (ties go to cluster 0 of the fit).
    """
    if not features:
        raise InputError("empty feature corpus")
    dim = features[0].dim
    stacks = []
    border = []
    for grid in features:
        if grid.dim != dim:
            raise InputError("feature grids disagree on embedding dimension")
        stacks.append(grid.flat())
        h, w = grid.grid_shape
        border.append(_border_mask(h, w))
    x = np.concatenate(stacks, axis=0).astype(np.float64)
    border_all = np.concatenate(border, axis=0)
    validate_hierarchy_params(x.shape[0], M, K)

    # one derived sub-seed per clustering problem
    child = np.random.SeedSequence(seed).generate_state(2 + (M + 1)).tolist()

    top = kmeans(x, 2, child[0])
    border_votes = np.bincount(top.labels[border_all], minlength=2)
    bg_label = int(np.argmax(border_votes))
    fg_label = 1 - bg_label
    fg_bg = np.stack([top.centroids[bg_label], top.centroids[fg_label]])

    fg_idx = np.flatnonzero(top.labels == fg_label)
    bg_idx = np.flatnonzero(top.labels == bg_label)
    if fg_idx.size < M:
        raise ConfigError(f"foreground has {fg_idx.size} patches, cannot fit M={M}")
    mid = kmeans(x[fg_idx], M, child[1])

    groups = [bg_idx] + [fg_idx[mid.labels == m] for m in range(M)]
    names = ["background"] + [f"part {m + 1}" for m in range(M)]
    sub = np.empty((M + 1, K, dim), dtype=np.float64)
    for g, (idx, name) in enumerate(zip(groups, names)):
        if idx.size < K:
            raise ConfigError(
                f"cluster {name!r} has {idx.size} patches, fewer than K={K}"
            )
        sub[g] = kmeans(x[idx], K, child[2 + g]).centroids

    spec = extractor or ExtractorSpec("unspecified", 0, features[0].patch_size)
    hier = PartHierarchy(
        fg_bg_centroids=fg_bg.astype(np.float32),
        part_centroids=mid.centroids.astype(np.float32),
        sub_centroids=sub.astype(np.float32),
        M=M,
        K=K,
        seed=seed,
        extractor=spec,
    )
    hier.validate()
    return hier
