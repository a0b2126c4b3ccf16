import numpy as np
import pytest

from equimesh import Mesh, generate_unit_square_mesh, structured_unit_square_mesh


@pytest.fixture
def square2():
    """Unit square split along the (0,0)-(1,1) diagonal."""
    return Mesh(
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        np.array([[0, 1, 2], [0, 2, 3]]),
    )


@pytest.fixture(scope="session")
def coarse_mesh():
    """The 0.04 quasi-uniform mesh shared by slower tests."""
    return generate_unit_square_mesh(0.04)


@pytest.fixture(scope="session")
def desk_mesh():
    return generate_unit_square_mesh(0.1)


@pytest.fixture
def grid8():
    return structured_unit_square_mesh(8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
