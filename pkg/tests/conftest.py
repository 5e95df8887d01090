import numpy as np
import pytest

from rnls.grid import FieldPair, make_radial_grid
from rnls.groundstate import (
    DEFAULT_N,
    DEFAULT_RMAX,
    GroundStateCache,
    get_ground_state,
    thresholds_from_ground_state,
)

# coarse grid for unit tests; the default grid is reserved for the acceptance run
SMALL_N = 1024
SMALL_RMAX = 25.0


@pytest.fixture(scope="session")
def cache(tmp_path_factory):
    return GroundStateCache(tmp_path_factory.mktemp("gs-cache"))


@pytest.fixture(scope="session")
def small_grid():
    return make_radial_grid(SMALL_N, SMALL_RMAX)


@pytest.fixture(scope="session")
def default_grid():
    return make_radial_grid(DEFAULT_N, DEFAULT_RMAX)


@pytest.fixture(scope="session")
def gs_small(small_grid, cache):
    return get_ground_state(1.0, small_grid, "petviashvili", cache=cache)


@pytest.fixture(scope="session")
def thr_small(gs_small):
    return thresholds_from_ground_state(gs_small)


@pytest.fixture(scope="session")
def gs_default(default_grid, cache):
    return get_ground_state(1.0, default_grid, "gradient_flow", cache=cache)


@pytest.fixture(scope="session")
def thr_default(gs_default):
    return thresholds_from_ground_state(gs_default)


def gaussian_pair(grid, a_u=1.0, a_v=1.0, width=1.0, chirp=0.0):
    r = grid.nodes
    g = np.exp(-(r**2) / (2 * width**2) + 1j * chirp * r**2)
    return FieldPair(a_u * g, a_v * g, grid)


@pytest.fixture(scope="session")
def gs_shooting(default_grid, cache):
    return get_ground_state(1.0, default_grid, "shooting", cache=cache)
