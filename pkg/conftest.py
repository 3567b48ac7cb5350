import pytest

from hilbert import SpaceSpec
from rabi_model import ModelParams

@pytest.fixture
def qubit_space():
    return SpaceSpec(48, 2)

@pytest.fixture
def fine_space():
    return SpaceSpec(64, 2)


@pytest.fixture
def longitudinal():
    """epsilon = 0: the polarized states are exact eigenstates."""
    return ModelParams(omega_c=1.0, epsilon=0.0, delta=0.2, lam=1.3)
