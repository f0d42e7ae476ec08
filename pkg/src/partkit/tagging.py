"""Tag images with part codes and segmentation masks via a fitted hierarchy."""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import InputError, StateError
from .features import FeatureGrid, extract_features, extractor_from_spec
from .hierarchy import PartHierarchy
from .parts import ABSENT, PartCode, PartComposition, PartMaskSet


def downsample_mask(mask: np.ndarray, grid_resolution: tuple[int, int]) -> np.ndarray:
    """Reduce a binary patch mask to a coarser grid.

    Each coarse cell covers a contiguous block of patches (index-range
    partition); the cell is 1 when at least half of its covered patches
    belong to the part.
    """
    hp, wp = mask.shape
    hg, wg = grid_resolution
    if hg > hp or wg > wp:
        raise InputError(
            f"grid resolution {grid_resolution} exceeds native {(hp, wp)}"
        )
    if (hg, wg) == (hp, wp):
        return mask.astype(np.uint8)
    out = np.zeros((hg, wg), dtype=np.uint8)
    row_edges = (np.arange(hg + 1) * hp) // hg
    col_edges = (np.arange(wg + 1) * wp) // wg
    for i in range(hg):
        for j in range(wg):
            block = mask[row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1]]
            if block.size and block.mean() >= 0.5:
                out[i, j] = 1
    return out


def _majority_variant(variants: np.ndarray, K: int) -> int:
    """Majority vote over per-patch variant labels; ties take the lowest."""
    counts = np.bincount(variants, minlength=K + 1)
    return int(np.argmax(counts[1:]) + 1)


def tag_features(grid: FeatureGrid, hierarchy: PartHierarchy,
                 grid_resolution: tuple[int, int] | None = None,
                 ) -> tuple[PartComposition, PartMaskSet]:
    """Nearest-centroid tagging of an extracted feature grid."""
    if hierarchy is None:
        raise StateError("hierarchy is not fitted")
    hierarchy.validate()
    if grid.dim != hierarchy.dim:
        raise InputError(
            f"feature dim {grid.dim} does not match hierarchy dim {hierarchy.dim}"
        )
    hp, wp = grid.grid_shape
    if grid_resolution is None:
        grid_resolution = (hp, wp)

    x = grid.flat().astype(np.float64)
    top_labels, _ = kernels.assign_nearest(x, hierarchy.fg_bg_centroids.astype(np.float64))
    is_fg = top_labels == 1  # row 0 = background

    # slot per patch: 0 for background, 1..M for parts
    slots = np.zeros(x.shape[0], dtype=np.int64)
    if is_fg.any():
        part_labels, _ = kernels.assign_nearest(
            x[is_fg], hierarchy.part_centroids.astype(np.float64)
        )
        slots[is_fg] = part_labels + 1

    # variant per patch within its slot's sub-centroid group
    variants = np.zeros(x.shape[0], dtype=np.int64)
    for s in range(hierarchy.M + 1):
        idx = np.flatnonzero(slots == s)
        if idx.size == 0:
            continue
        sub_labels, _ = kernels.assign_nearest(
            x[idx], hierarchy.sub_centroids[s].astype(np.float64)
        )
        variants[idx] = sub_labels + 1

    codes = []
    masks = np.zeros((hierarchy.M + 1, *grid_resolution), dtype=np.uint8)
    present = np.zeros(hierarchy.M + 1, dtype=bool)
    slot_map = slots.reshape(hp, wp)
    for s in range(hierarchy.M + 1):
        idx = np.flatnonzero(slots == s)
        if idx.size == 0:
            codes.append(PartCode(s, ABSENT))
            continue
        present[s] = True
        codes.append(PartCode(s, _majority_variant(variants[idx], hierarchy.K)))
        masks[s] = downsample_mask((slot_map == s).astype(np.uint8), grid_resolution)

    return PartComposition(tuple(codes)), PartMaskSet(masks, present)


def tag_image(image, hierarchy: PartHierarchy,
              grid_resolution: tuple[int, int] | None = None,
              extractor=None, image_id: str = "",
              ) -> tuple[PartComposition, PartMaskSet]:
    """Extract features with the hierarchy's recorded extractor and tag them."""
    if hierarchy is None:
        raise StateError("hierarchy is not fitted")
    if extractor is None:
        extractor = extractor_from_spec(hierarchy.extractor)
    grid = extract_features(image, extractor, image_id)
    return tag_features(grid, hierarchy, grid_resolution)
