import numpy as np
import pytest

import sdot

from helpers import icosphere, unit_square


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # jit compilation must not count against any timed assertion below
    soup = unit_square()
    sites = sdot.SiteSet(np.array([[0.25, 0.5, 0.0], [0.75, 0.5, 0.0]]))
    psi, _ = sdot.damped_newton(soup, sites)
    sdot.compute_diagram(soup, sites, psi, want_cost=True, want_geometry=True)
    sdot.distance_to_soup(np.array([0.5, 0.5, 1.0]), soup)


@pytest.fixture(scope="session")
def square():
    return unit_square()


@pytest.fixture(scope="session")
def sphere():
    return icosphere(2)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
