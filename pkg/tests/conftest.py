import numpy as np
import pytest

from lib.transport.costs import power_cost
from lib.transport.measures import DiscreteMeasure, uniform_box


@pytest.fixture
def quadratic():
    return power_cost(2.0)


@pytest.fixture
def unit_interval():
    return uniform_box([0.0], [1.0])


@pytest.fixture
def unit_square():
    return uniform_box([0.0, 0.0], [1.0, 1.0])


@pytest.fixture
def oracle_P():
    """x = (0, 1), p = (1/4, 3/4): boundary at 1/4, cost 7/48, z = (-1/4, 1/4)."""
    return DiscreteMeasure(points=[0.0, 1.0], weights=[0.25, 0.75])


@pytest.fixture
def symmetric_P():
    return DiscreteMeasure(points=[0.0, 1.0], weights=[0.5, 0.5])


@pytest.fixture
def oracle_z():
    return np.array([-0.25, 0.25])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
