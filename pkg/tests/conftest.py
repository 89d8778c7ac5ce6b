import numpy as np
import pytest

from app.calculus import DeRhamComplex
from app.mesh import structured_unit_square


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def mesh4():
    return structured_unit_square(4)


@pytest.fixture(scope="session")
def essential4(mesh4):
    return DeRhamComplex(mesh4, essential=True)


@pytest.fixture(scope="session")
def natural4(mesh4):
    return DeRhamComplex(mesh4, essential=False)


@pytest.fixture(scope="session", params=[True, False], ids=["essential", "natural"])
def complex4(request, essential4, natural4):
    return essential4 if request.param else natural4
