import numpy as np
import pytest

from degenheat.carleman import CarlemanParams
from degenheat.grid_operator import ProblemSpec, assemble_operator, build_grid
from degenheat.semigroup import spectral_decomposition

DEFAULT = dict(alpha=0.5, beta0=1.0, beta1=1.0, kappa=0.3, tau=0.5, T=1.0, eps=0.1)


def default_spec(**overrides) -> ProblemSpec:
    params = {**DEFAULT, **overrides}
    return ProblemSpec(**params)


@pytest.fixture(scope="session")
def spec():
    return default_spec()


@pytest.fixture(scope="session")
def params():
    return CarlemanParams(s=0.5, h_w=0.5, T=1.0, alpha=0.5)


def _op(n, **overrides):
    grid = build_grid(n)
    return grid, assemble_operator(grid, default_spec(**overrides))


@pytest.fixture(scope="session")
def op128():
    return _op(128)[1]


@pytest.fixture(scope="session")
def op200():
    return _op(200)[1]


@pytest.fixture(scope="session")
def op400():
    return _op(400)[1]


@pytest.fixture(scope="session")
def sd200(op200):
    return spectral_decomposition(op200)


@pytest.fixture(scope="session")
def sd400(op400):
    return spectral_decomposition(op400)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
