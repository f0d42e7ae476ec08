import numpy as np
import pytest

from partkit.errors import ConfigError, InputError, StateError
from partkit.features import ExtractorSpec, FeatureGrid
from partkit.hierarchy import PartHierarchy, fit_hierarchy
from partkit.tagging import tag_features


def _synthetic_grids(rng, n_images=24, side=14, dim=6):
    """Random feature grids whose border patches share a distinct offset,
    so the background cluster is unambiguous."""
    grids = []
    for i in range(n_images):
        feats = rng.normal(size=(side, side, dim)).astype(np.float32)
        feats[0, :] += 6.0
        feats[-1, :] += 6.0
        feats[:, 0] += 6.0
        feats[:, -1] += 6.0
        grids.append(FeatureGrid(feats, f"synth_{i}", 1))
    return grids


def test_shapes_and_invariants(hierarchy):
    assert hierarchy.fg_bg_centroids.shape == (2, hierarchy.dim)
    assert hierarchy.part_centroids.shape == (hierarchy.M, hierarchy.dim)
    assert hierarchy.sub_centroids.shape == (hierarchy.M + 1, hierarchy.K, hierarchy.dim)
    hierarchy.validate()


def test_refit_reproduces_assignments(feature_grids, hierarchy, extractor):
    refit = fit_hierarchy(feature_grids, hierarchy.M, hierarchy.K,
                          hierarchy.seed, extractor.spec)
    assert (refit.fg_bg_centroids == hierarchy.fg_bg_centroids).all()
    assert (refit.part_centroids == hierarchy.part_centroids).all()
    assert (refit.sub_centroids == hierarchy.sub_centroids).all()
    grid = feature_grids[0]
    comp_a, masks_a = tag_features(grid, hierarchy, (16, 16))
    comp_b, masks_b = tag_features(grid, refit, (16, 16))
    assert comp_a == comp_b
    assert (masks_a.masks == masks_b.masks).all()


def test_background_is_border_majority_cluster(rng):
    grids = _synthetic_grids(rng)
    h = fit_hierarchy(grids, M=2, K=3, seed=5)
    border_mean = np.stack([g.patches[0].mean(axis=0) for g in grids]).mean(axis=0)
    d_bg = np.linalg.norm(h.fg_bg_centroids[0] - border_mean)
    d_fg = np.linalg.norm(h.fg_bg_centroids[1] - border_mean)
    assert d_bg < d_fg


def test_degenerate_single_part_single_variant(rng):
    grids = _synthetic_grids(rng, n_images=8)
    h = fit_hierarchy(grids, M=1, K=1, seed=0)
    comp, masks = tag_features(grids[0], h)
    assert comp.codes[1].slot == 1 and comp.codes[1].variant == 1
    # every foreground patch lands in the single (1,1) cluster
    fg_cells = masks.masks[1].sum() + masks.masks[0].sum()
    assert fg_cells == grids[0].grid_shape[0] * grids[0].grid_shape[1]


def test_reference_scale_settings_accepted(rng):
    """M=5 / M=7 with K=256 pass validation and fit on an ample corpus."""
    grids = [FeatureGrid(rng.normal(size=(16, 16, 4)).astype(np.float32), str(i), 1)
             for i in range(30)]  # 7680 patches
    for m in (5, 7):
        h = fit_hierarchy(grids, M=m, K=256, seed=1)
        assert h.sub_centroids.shape == (m + 1, 256, 4)


def test_empty_corpus_raises():
    with pytest.raises(InputError):
        fit_hierarchy([], M=3, K=4, seed=0)


def test_small_cluster_names_the_culprit(rng):
    grids = _synthetic_grids(rng, n_images=2, side=6)
    with pytest.raises(ConfigError) as err:
        fit_hierarchy(grids, M=2, K=64, seed=0)
    assert "K=64" in str(err.value)


def test_malformed_hierarchy_rejected(rng):
    h = PartHierarchy(
        fg_bg_centroids=np.zeros((2, 4)),
        part_centroids=np.zeros((3, 4)),
        sub_centroids=np.zeros((2, 5, 4)),  # wrong group count
        M=3, K=5, seed=0, extractor=ExtractorSpec("patch-stats", 64, 4),
    )
    with pytest.raises(StateError):
        h.validate()
    grid = FeatureGrid(np.zeros((4, 4, 4), dtype=np.float32), "x", 1)
    with pytest.raises(StateError):
        tag_features(grid, h)


def test_code_centroid_bounds(hierarchy):
    with pytest.raises(InputError):
        hierarchy.code_centroid(0, 0)
    with pytest.raises(InputError):
        hierarchy.code_centroid(hierarchy.M + 1, 1)
    vec = hierarchy.code_centroid(1, 2)
    assert vec.shape == (hierarchy.dim,)
