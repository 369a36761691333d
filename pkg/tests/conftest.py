import numpy as np
import pytest

from doublecurrent.checks import corpus


@pytest.fixture(scope="session")
def graphs():
    return corpus()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
