import numpy as np
import pytest

from shellfsi.basis import build_basis
from shellfsi.dynamics import GalerkinSystem, Physics
from shellfsi.geometry import DEFAULT_DOMAIN
from shellfsi.mesh import build_onion_mesh


@pytest.fixture(scope="session")
def mesh():
    return build_onion_mesh(6, 24)


@pytest.fixture(scope="session")
def basis(mesh):
    return build_basis(mesh, 10, 16)


@pytest.fixture(scope="session")
def system(basis):
    return GalerkinSystem(basis, DEFAULT_DOMAIN, Physics(1.0, 1.0, 1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
