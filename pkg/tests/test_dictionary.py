import numpy as np
import pytest

from partkit.dictionary import ImageTag, PartDictionary, load_dictionary, save_dictionary
from partkit.errors import InputError, StateError
from partkit.tagging import tag_features


@pytest.fixture()
def built_dictionary(hierarchy, feature_grids):
    tags = {}
    for grid in feature_grids[:10]:
        comp, masks = tag_features(grid, hierarchy, (16, 16))
        tags[grid.source_image_id] = ImageTag(comp, masks)
    return PartDictionary(hierarchy, tags, {"1:2": "head-ish band"})


def test_roundtrip_preserves_everything(tmp_path, built_dictionary, hierarchy):
    path = save_dictionary(built_dictionary, tmp_path / "parts.json")
    loaded = load_dictionary(path)
    assert loaded.M == hierarchy.M and loaded.K == hierarchy.K
    assert loaded.hierarchy.extractor == hierarchy.extractor
    assert (loaded.hierarchy.fg_bg_centroids == hierarchy.fg_bg_centroids).all()
    assert (loaded.hierarchy.part_centroids == hierarchy.part_centroids).all()
    assert (loaded.hierarchy.sub_centroids == hierarchy.sub_centroids).all()
    assert set(loaded.tags) == set(built_dictionary.tags)
    for image_id, tag in built_dictionary.tags.items():
        assert loaded.tags[image_id].composition == tag.composition
        assert (loaded.tags[image_id].masks.masks == tag.masks.masks).all()
        assert (loaded.tags[image_id].masks.present == tag.masks.present).all()
    assert loaded.label_hints == {"1:2": "head-ish band"}


def test_roundtripped_hierarchy_tags_identically(tmp_path, built_dictionary,
                                                 feature_grids):
    path = save_dictionary(built_dictionary, tmp_path / "parts.json")
    loaded = load_dictionary(path)
    for grid in feature_grids[:5]:
        comp_a, masks_a = tag_features(grid, built_dictionary.hierarchy, (16, 16))
        comp_b, masks_b = tag_features(grid, loaded.hierarchy, (16, 16))
        assert comp_a == comp_b
        assert (masks_a.masks == masks_b.masks).all()


def test_exemplar_lookup(built_dictionary):
    some_code = next(iter(built_dictionary.tags.values())).composition.codes[1]
    ids = built_dictionary.exemplars(some_code.slot, some_code.variant)
    assert ids, "expected at least the image that produced the code"
    for image_id in ids:
        assert built_dictionary.tags[image_id].composition.codes[1].variant == \
            some_code.variant


def test_missing_and_corrupt_files(tmp_path):
    with pytest.raises(StateError):
        load_dictionary(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InputError):
        load_dictionary(bad)


def test_centroids_survive_as_float32(tmp_path, built_dictionary):
    path = save_dictionary(built_dictionary, tmp_path / "parts.json")
    loaded = load_dictionary(path)
    assert loaded.hierarchy.sub_centroids.dtype == np.float32
