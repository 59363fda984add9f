import numpy as np
import pytest

from tgdin.core import SimConstants


@pytest.fixture
def consts():
    return SimConstants()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
