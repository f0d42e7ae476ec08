import numpy as np
import pytest

from partkit.errors import InputError
from partkit.features import ExtractorSpec, FeatureGrid
from partkit.hierarchy import PartHierarchy
from partkit.parts import ABSENT, PartCode, PartComposition, PartMaskSet
from partkit.tagging import downsample_mask, tag_features, tag_image


def _toy_hierarchy(M=3, K=8, dim=4):
    """Hand-built hierarchy with axis-aligned centroids for forced tagging."""
    fg_bg = np.zeros((2, dim), dtype=np.float32)
    fg_bg[0, 0] = -10.0  # background pole
    fg_bg[1, 0] = 10.0
    parts = np.zeros((M, dim), dtype=np.float32)
    for m in range(M):
        parts[m, 0] = 10.0
        parts[m, 1] = 5.0 * m
    subs = np.zeros((M + 1, K, dim), dtype=np.float32)
    for g in range(M + 1):
        for k in range(K):
            subs[g, k] = [10.0 if g else -10.0, 5.0 * (g - 1) if g else 0.0,
                          2.0 * k, 0.0]
    return PartHierarchy(fg_bg, parts, subs, M, K, seed=0,
                         extractor=ExtractorSpec("patch-stats", 64, 4))


def _grid_for(points, shape=(4, 4)):
    feats = np.asarray(points, dtype=np.float32).reshape(*shape, -1)
    return FeatureGrid(feats, "forced", 1)


def test_forced_assignment_lands_in_expected_code():
    h = _toy_hierarchy()
    # half the patches sit on background pole, half exactly on part 2 / sub 7
    cells = []
    for i in range(16):
        if i < 8:
            cells.append([-10.0, 0.0, 0.0, 0.0])
        else:
            cells.append([10.0, 5.0, 12.0, 0.0])  # third coord = 2 * (7 - 1)
    comp, masks = tag_features(_grid_for(cells), h)
    assert comp.codes[2] == PartCode(2, 7)
    assert masks.masks[2].reshape(-1)[8:].all()
    assert not masks.masks[2].reshape(-1)[:8].any()


def test_occluded_slot_marked_absent():
    h = _toy_hierarchy()
    cells = [[-10.0, 0, 0, 0]] * 8 + [[10.0, 0.0, 0.0, 0.0]] * 8  # only part 1
    comp, masks = tag_features(_grid_for(cells), h)
    assert comp.codes[2].variant == ABSENT
    assert comp.codes[3].variant == ABSENT
    assert not masks.present[2] and not masks.present[3]
    assert not masks.masks[2].any() and not masks.masks[3].any()


def test_majority_vote_ties_take_lowest_variant():
    h = _toy_hierarchy()
    cells = [[-10.0, 0, 0, 0]] * 8
    cells += [[10.0, 0.0, 2.0, 0.0]] * 4  # part 1, sub 2
    cells += [[10.0, 0.0, 0.0, 0.0]] * 4  # part 1, sub 1 -> tie
    comp, _ = tag_features(_grid_for(cells), h)
    assert comp.codes[1] == PartCode(1, 1)


def test_masks_partition_grid(sprite_corpus, hierarchy, feature_grids):
    comp, masks = tag_features(feature_grids[0], hierarchy)
    total = masks.masks.sum(axis=0)
    assert (total == 1).all()  # disjoint and complete at native resolution
    assert comp.num_slots == hierarchy.M + 1


def test_downsample_majority_rule():
    mask = np.array([
        [1, 1, 0, 0],
        [1, 0, 0, 0],
        [1, 1, 1, 1],
        [1, 1, 1, 1],
    ], dtype=np.uint8)
    out = downsample_mask(mask, (2, 2))
    # top-left block has 3/4 ones, top-right 0/4, bottom blocks 4/4
    assert out.tolist() == [[1, 0], [1, 1]]
    half = np.array([[1, 0], [1, 0]], dtype=np.uint8)
    assert downsample_mask(half, (1, 1)).tolist() == [[1]]  # exactly 50% -> 1


def test_downsample_identity_and_bounds():
    mask = np.eye(4, dtype=np.uint8)
    assert (downsample_mask(mask, (4, 4)) == mask).all()
    with pytest.raises(InputError):
        downsample_mask(mask, (8, 8))


def test_grid_resolution_cap(feature_grids, hierarchy):
    with pytest.raises(InputError):
        tag_features(feature_grids[0], hierarchy, (32, 32))


def test_tag_image_uses_recorded_extractor(sprite_corpus, hierarchy):
    ex = sprite_corpus[0]
    comp_a, _ = tag_image(ex.image, hierarchy, (16, 16))
    comp_b, _ = tag_image(ex.image, hierarchy, (16, 16))
    assert comp_a == comp_b


def test_maskset_invariants():
    with pytest.raises(InputError):
        PartMaskSet(np.full((2, 4, 4), 2, dtype=np.uint8), [True, True])
    with pytest.raises(InputError):  # absent slot with nonzero mask
        PartMaskSet(np.ones((2, 4, 4), dtype=np.uint8), [True, False])
    ok = PartMaskSet(np.zeros((2, 4, 4), dtype=np.uint8), [False, False])
    assert ok.grid_resolution == (4, 4)


def test_composition_slot_ordering():
    with pytest.raises(InputError):
        PartComposition((PartCode(1, 1), PartCode(0, 1)))
    comp = PartComposition.from_variants([2, 1, 3])
    assert comp.present_slots() == [0, 1, 2]
    assert PartComposition.from_spec_string(comp.to_spec_string()) == comp
