import numpy as np
import pytest

from bridgectl import build_model, neumann_lift
from bridgectl.spectral import make_control_operator


@pytest.fixture(scope="session")
def model8():
    return build_model(8)


@pytest.fixture(scope="session")
def lifts8(model8):
    return neumann_lift(model8)


@pytest.fixture(scope="session")
def op8(model8, lifts8):
    return make_control_operator(model8, lifts8, b_matrix=np.eye(8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
