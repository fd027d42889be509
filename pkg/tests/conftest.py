import numpy as np
import pytest

from smrlab.fem import FeSpace, assemble
from smrlab.mesh import build_box_mesh, mesh_hierarchy
from smrlab.spde import build_levels
from smrlab.spectral import eigendecompose


@pytest.fixture(scope="session")
def levels_1d():
    """1D levels 2..7 with eigen data."""
    return build_levels(1, [2, 3, 4, 5, 6, 7])


@pytest.fixture(scope="session")
def hierarchy_1d():
    return mesh_hierarchy(1, 6)


@pytest.fixture(scope="session")
def hierarchy_2d():
    return mesh_hierarchy(2, 5)


@pytest.fixture
def ops_h025():
    """1D mesh with h = 1/4: three interior dofs, with eigen data."""
    return eigendecompose(assemble(FeSpace(build_box_mesh(1, 4))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
