import numpy as np
import pytest

from mlmcmc.hier_model import HierGaussModel, HierModelConfig, simulate_data
from mlmcmc.rng import Purpose, derive_stream

SEED = 1


def make_model(max_level=8, M0=8, seed=SEED, **kw):
    K_max = M0 * 2**max_level
    y = simulate_data(1.0, K_max, derive_stream(seed, Purpose.DATA), kw.get("lam", 1000.0))
    return HierGaussModel(HierModelConfig(M0=M0, max_level=max_level, y=y, **kw))


@pytest.fixture(scope="session")
def model():
    """Default model on the seed-1 dataset, levels 0..8."""
    return make_model()


@pytest.fixture(scope="session")
def small_model():
    return make_model(max_level=3, M0=2)
