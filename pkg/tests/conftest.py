import numpy as np
import pytest

from spikelab.linearized import build_corrections, matched_grid
from spikelab.potential import find_critical_point, harmonic
from spikelab.radial import RadialGrid, solve_townes


@pytest.fixture(scope="session")
def townes20():
    """Reference radial solve at the default grid (dr = 0.005, R = 20)."""
    return solve_townes(RadialGrid(0.005, 4000))


@pytest.fixture(scope="session")
def townes16():
    """Profile matched to the correction-grid half-width R = 16."""
    return solve_townes(RadialGrid(0.005, 3200), tail_tol=1e-6)


@pytest.fixture(scope="session")
def spec_p2():
    return harmonic(2.0)


@pytest.fixture(scope="session")
def analysis_p2(spec_p2, townes20):
    return find_critical_point(spec_p2, townes20)


@pytest.fixture(scope="session")
def corrections_p2(townes16, spec_p2, analysis_p2):
    return build_corrections(townes16, spec_p2, analysis_p2,
                             grid=matched_grid(townes16, 0.05))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260808)
