import numpy as np
import pytest

from subnet_bne.discretization import discretize_types
from subnet_bne.game import builtin_rent_seeking, named_game


@pytest.fixture(scope="session")
def rent_seeking():
    return builtin_rent_seeking()


@pytest.fixture(scope="session")
def rent_seeking_model(rent_seeking):
    return discretize_types(rent_seeking, 4, 4)


@pytest.fixture(scope="session")
def separable():
    return named_game("separable_quadratic", [[0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]])


@pytest.fixture(scope="session")
def bilinear():
    return named_game("bilinear", [[-1.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
