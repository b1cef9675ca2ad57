import numpy as np
import pytest

from torus_gossip.experiments import provide_curves
from torus_gossip.laplace import solve_phi_fixed_point


@pytest.fixture(scope="session")
def phi_by_d():
    """Solved transform grids, one per supported dimension."""
    return {d: solve_phi_fixed_point(d) for d in (1, 2, 3)}


@pytest.fixture(scope="session")
def curves_by_d():
    return {d: provide_curves(d)[0] for d in (1, 2, 3)}


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(987654321))
