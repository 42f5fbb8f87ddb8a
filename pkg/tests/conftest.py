import numpy as np
import pytest

from cdnpg import tensor as T


@pytest.fixture
def f64():
    with T.precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
