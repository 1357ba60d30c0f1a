import math

import numpy as np
import pytest

from spikelab.errors import BallOutsideGrid, Collapse, GridTooCoarse
from spikelab.gp2d import (FlowOptions, extract_mu, locate_maximum, minimize,
                           pohozaev_residual, uniqueness_probe)
from spikelab.grid import CartesianGrid2D


@pytest.fixture(scope="module")
def near_critical(spec_p2, analysis_p2, townes20):
    grid = CartesianGrid2D(half_width=3.0, step=6.0 / 256)
    a = 0.97 * townes20.a_star
    state = minimize(spec_p2, analysis_p2, townes20, a, grid)
    return state, grid


def test_harmonic_oscillator_limit(spec_p2, analysis_p2, townes20):
    grid = CartesianGrid2D(half_width=6.0, step=12.0 / 192)
    state = minimize(spec_p2, analysis_p2, townes20, 0.0, grid)
    assert state.energy == pytest.approx(2.0, abs=5e-3)
    X, Y = grid.meshes()
    gauss = np.exp(-(X**2 + Y**2) / 2)
    gauss /= grid.norm2(gauss)
    assert np.abs(state.field.values - gauss).max() < 1e-3
    # with a = 0 the multiplier equals the energy exactly
    assert state.mu == pytest.approx(state.energy, rel=1e-12)
    assert np.array_equal(state.x_max, np.zeros(2))


def test_collapse_rejection(spec_p2, analysis_p2, townes20):
    grid = CartesianGrid2D(half_width=3.0, step=6.0 / 256)
    with pytest.raises(Collapse):
        minimize(spec_p2, analysis_p2, townes20, townes20.a_star, grid)
    with pytest.raises(Collapse):
        minimize(spec_p2, analysis_p2, townes20,
                 townes20.a_star * (1 - 1e-4), grid)
    with pytest.raises(ValueError):
        minimize(spec_p2, analysis_p2, townes20, -0.1, grid)


def test_grid_too_coarse(spec_p2, analysis_p2, townes20):
    grid = CartesianGrid2D(half_width=3.0, step=6.0 / 64)
    with pytest.raises(GridTooCoarse):
        minimize(spec_p2, analysis_p2, townes20, 0.997 * townes20.a_star, grid)


def test_near_critical_state(near_critical, spec_p2, townes20):
    state, grid = near_critical
    assert state.converged
    # unit mass after the final projection
    assert grid.norm2(state.field.values) == pytest.approx(1.0, abs=1e-12)
    assert np.all(state.field.values >= -1e-10)
    dev = state.mu * state.scale.eps**2 / state.lam**2
    assert -1.2 < dev < -0.8
    # quartic moment matches the critical form (2 lambda^2/a*) alpha^{-1/2}
    q4 = grid.integrate(state.field.values**4)
    target = 2 * state.lam**2 / townes20.a_star / math.sqrt(state.scale.alpha)
    assert q4 == pytest.approx(target, rel=0.15)
    assert np.abs(state.x_max).max() < 1e-8
    assert extract_mu(state, spec_p2) == pytest.approx(state.mu, rel=1e-10)


def test_energy_decreasing_in_a(near_critical, spec_p2, analysis_p2, townes20):
    state97, grid = near_critical
    state95 = minimize(spec_p2, analysis_p2, townes20, 0.95 * townes20.a_star,
                       grid)
    assert state95.energy > state97.energy


def test_rescaled_profile_near_w(near_critical, townes20):
    """The rescaled state approaches the ground profile on compacts."""
    state, grid = near_critical
    eps, lam = state.scale.eps, state.lam
    i0 = grid.origin_index()
    amp = math.sqrt(townes20.a_star) * eps / lam
    # compare along the x-axis within |x| <= eps/lam * 4
    k = int(4 * eps / lam / grid.step)
    sel = slice(i0 - k, i0 + k + 1)
    x = grid.interior[sel]
    ub = amp * state.field.values[sel, i0]
    w_ref = townes20.w_at(np.abs(lam * x / eps))
    assert np.abs(ub - w_ref).max() < 0.05


def test_decay_envelope(near_critical, townes20):
    state, grid = near_critical
    eps, lam = state.scale.eps, state.lam
    X, Y = grid.meshes()
    r = np.hypot(X, Y)
    scaled = eps * state.field.values * np.exp(lam * r / (2 * eps))
    # bounded by a modest multiple of the central amplitude
    assert scaled.max() < 10 * (lam / math.sqrt(townes20.a_star)) * townes20.w0


def test_pohozaev_radial(near_critical, spec_p2):
    state, grid = near_critical
    rep = pohozaev_residual(state, spec_p2, 0.8)
    assert np.abs(rep.grad_mismatch).max() < 1e-10
    rep2 = pohozaev_residual(state, spec_p2, 1.6)
    assert np.abs(rep2.grad_mismatch).max() < 1e-10
    with pytest.raises(BallOutsideGrid):
        pohozaev_residual(state, spec_p2, 5.0)


def test_locate_maximum_subcell():
    grid = CartesianGrid2D(half_width=2.0, step=0.125)
    X, Y = grid.meshes()
    cx, cy = 0.31, -0.44     # deliberately off-lattice
    u = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2))
    xm = locate_maximum(grid, u)
    assert abs(xm[0] - cx) < 2e-3
    assert abs(xm[1] - cy) < 2e-3


def test_uniqueness_preconditions(spec_p2, analysis_p2, townes20, rng):
    grid = CartesianGrid2D(half_width=3.0, step=6.0 / 256)
    with pytest.raises(ValueError):
        uniqueness_probe(spec_p2, analysis_p2, townes20,
                         0.95 * townes20.a_star, grid, 3, rng)
    with pytest.raises(ValueError):
        uniqueness_probe(spec_p2, analysis_p2, townes20,
                         0.5 * townes20.a_star, grid, 8, rng)


def test_reflected_starts_agree(spec_p2, analysis_p2, townes20):
    """Mirror-image seeds converge to the same minimizer of the even trap."""
    grid = CartesianGrid2D(half_width=3.0, step=6.0 / 256)
    a = 0.95 * townes20.a_star
    X, Y = grid.meshes()
    states = []
    for sx in (+1.0, -1.0):
        bump = np.exp(-((X - sx * 0.4) ** 2 + Y**2) / (2 * 0.5**2))
        states.append(minimize(spec_p2, analysis_p2, townes20, a, grid,
                               FlowOptions(init=bump)))
    diff = np.abs(states[0].field.values - states[1].field.values).max()
    assert diff < 1e-6
