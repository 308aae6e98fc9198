import pytest

from degenlab.operators import DiscreteD, WeightedGrid
from degenlab.weights import constant_weight, power_weight


def make_grid(model, n):
    g = WeightedGrid.from_model(model, n)
    return g, DiscreteD(g)


@pytest.fixture(scope="session")
def flat32():
    return make_grid(constant_weight(), 32)


@pytest.fixture(scope="session")
def power32():
    return make_grid(power_weight(0.5), 32)
