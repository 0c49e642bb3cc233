import numpy as np
import pytest

from dgtracer.mesh import build_cubed_sphere_mesh, build_slice_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def slice4():
    return build_slice_mesh(4, 3, 2000.0, 2000.0)


@pytest.fixture(scope="session")
def sphere2():
    return build_cubed_sphere_mesh(2, 1.0)
