import numpy as np
import pytest

from oocgraph.synth import GenConfig, generate_dataset, generate_world


@pytest.fixture(scope="session")
def small_world():
    return generate_world(6, 2, 8, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_world):
    return generate_dataset(small_world, GenConfig(seed=1, num_train_scenes=240, num_test_scenes=80))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
