import numpy as np
import pytest

from prlcsim.objectives import Dataset, Quadratic, make_logreg, make_mlp1, make_quadratic
from prlcsim.vecmath import RngStream


@pytest.fixture(scope="session")
def quad_small():
    return make_quadratic(2, 10, 5.0, RngStream(42, 1))


@pytest.fixture(scope="session")
def quad10():
    return make_quadratic(10, 200, 10.0, RngStream(42, 1))


@pytest.fixture(scope="session")
def logreg():
    return make_logreg(20, 2000, 2.0, RngStream(0, 1))


@pytest.fixture(scope="session")
def mlp():
    return make_mlp1(5, 8, 500, RngStream(7, 1))


def scalar_quadratic(a=1.0, b=0.0):
    return Quadratic(Dataset(np.array([[a]]), np.array([b])))
