import numpy as np
import pytest
from hypothesis import settings

from sleepvit.model import make_engine, random_epochs

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def engine():
    """Default-config engine with seeded random weights in [-0.25, 0.25]."""
    return make_engine(seed=0, scale=0.25)


@pytest.fixture(scope="session")
def epochs():
    return random_epochs(1, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
