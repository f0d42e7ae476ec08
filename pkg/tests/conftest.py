import numpy as np
import pytest
import torch

from partkit.features import PatchStatsExtractor, extract_features
from partkit.hierarchy import fit_hierarchy
from partkit.sprites import make_corpus
from partkit.training import TrainingConfig, build_tagged_corpus, train

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def sprite_corpus():
    return make_corpus(48, seed=7, correlated_prob=0.8)


@pytest.fixture(scope="session")
def extractor():
    return PatchStatsExtractor(64, 4)


@pytest.fixture(scope="session")
def feature_grids(sprite_corpus, extractor):
    return [extract_features(ex.image, extractor, ex.image_id)
            for ex in sprite_corpus]


@pytest.fixture(scope="session")
def hierarchy(feature_grids, extractor):
    return fit_hierarchy(feature_grids, M=3, K=4, seed=11, extractor=extractor.spec)


@pytest.fixture(scope="session")
def tagged_corpus(sprite_corpus, hierarchy):
    return build_tagged_corpus(
        [(ex.image_id, ex.image) for ex in sprite_corpus], hierarchy, (16, 16)
    )


@pytest.fixture(scope="session")
def tiny_state(tagged_corpus, hierarchy):
    """A briefly trained model for generation/eval plumbing tests."""
    config = TrainingConfig(
        lambda_attn=0.01, learning_rate=5e-3, batch_size=8, epochs=1000,
        image_resolution=64, seed=3, max_steps=120,
    )
    return train(tagged_corpus, hierarchy, config)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
