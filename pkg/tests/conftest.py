import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("east", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("east")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def C3():
    return np.array([[5.0, 1.0, 0.0], [2.0, 3.0, 1.0], [0.0, 0.0, 8.0]])
