import numpy as np
import pytest

from spikelab.errors import NotSolvable
from spikelab.grid import gradient_at_origin
from spikelab.linearized import (LIN_TOL, LinearizedOperator, build_phi,
                                 export_field_csv, matched_grid,
                                 solve_radial_mod_kernel)
from spikelab.potential import (PotentialSpec, angular_samples,
                                find_critical_point, grad_H, harmonic)


@pytest.fixture(scope="module")
def lop(townes16, corrections_p2):
    return corrections_p2.diagnostics["operator"]


def test_grid_must_match_profile(townes16):
    from spikelab.grid import CartesianGrid2D
    with pytest.raises(ValueError):
        LinearizedOperator(townes16, CartesianGrid2D(half_width=12.0, step=0.05))
    with pytest.raises(ValueError):
        LinearizedOperator(townes16, CartesianGrid2D(half_width=16.0, step=0.2))


def test_kernel_residuals(lop, townes16):
    r1, r2, r3 = lop.kernel_residuals()
    tol = LIN_TOL * townes16.w0
    assert r1 < tol
    assert r2 < tol
    assert r3 < tol


def test_solve_closed_form(lop):
    r = lop.grid.radii()
    exact = -0.5 * (lop.w + r * lop.townes.dw_at(r))
    psi, info = lop.solve_mod_kernel(lop.w)
    err = np.abs(psi - exact).max() / np.abs(exact).max()
    assert err < 1e-3
    assert info["residual"] < 1e-8


def test_kernel_forcing_rejected(lop):
    with pytest.raises(NotSolvable):
        lop.solve_mod_kernel(lop.d1)


def test_solution_normalization_and_residual(lop, corrections_p2):
    g = lop.grid
    for name in ("psi1", "psi3", "psi4", "psi5"):
        psi = getattr(corrections_p2, name).values
        assert np.abs(gradient_at_origin(g, psi)).max() < 1e-9
    # adding any kernel combination breaks the normalization
    psi = corrections_p2.psi1.values + 0.01 * lop.d1
    w2c = abs(lop.townes.curv0())
    assert np.abs(gradient_at_origin(g, psi)).max() > 0.005 * w2c


def test_psi_residuals(lop, corrections_p2, spec_p2, analysis_p2):
    g = lop.grid
    X, Y = g.meshes()
    h = spec_p2.h_at(X, Y)
    t = lop.townes
    f1 = (-2 * lop.w**3 / t.moments.quartic
          - 2 * h * lop.w / (spec_p2.p * analysis_p2.H0))
    res = lop.apply(corrections_p2.psi1.values) - f1
    assert np.abs(res).max() < LIN_TOL * np.abs(f1).max()


def test_psi1_identities(lop, corrections_p2):
    g = lop.grid
    w = lop.w
    psi1 = corrections_p2.psi1.values
    rel = abs(g.inner(w, psi1)) / (g.norm2(w) * g.norm2(psi1))
    assert rel < 1e-3
    assert g.inner(w**3, psi1) == pytest.approx(1.5, rel=0.01)
    # even forcing gives an even field
    assert np.abs(psi1 - psi1[::-1, :]).max() < 1e-8
    assert np.abs(psi1 - psi1[:, ::-1]).max() < 1e-8


def test_psi2_closed_form(lop, corrections_p2, townes16):
    g = lop.grid
    psi2 = corrections_p2.psi2.values
    i0 = g.origin_index()
    assert psi2[i0, i0] == pytest.approx(-townes16.w0 / 2, rel=1e-12)
    assert abs(g.inner(lop.w, psi2)) / (g.norm2(lop.w) * g.norm2(psi2)) < 1e-6
    # closed form is radial: invariant under axis flips and transposition
    assert np.abs(psi2 - psi2.T).max() < 1e-12
    assert np.abs(psi2 - psi2[::-1, :]).max() < 1e-12
    # contract L psi2 = w within the operator tolerance
    assert np.abs(lop.apply(psi2) - lop.w).max() < LIN_TOL * townes16.w0


def test_y_sup_even(corrections_p2):
    assert np.abs(corrections_p2.y_sup).max() < 1e-8


def test_psi4_radial_symmetry(corrections_p2):
    psi4 = corrections_p2.psi4.values
    assert np.abs(psi4 - psi4.T).max() < 1e-6
    assert np.abs(psi4 - psi4[::-1, :]).max() < 1e-6
    agree = corrections_p2.diagnostics["psi4_radial_agreement"]
    assert agree < 2 * LIN_TOL * np.abs(psi4).max()


def test_radial_reduction_matches_closed_form(townes16):
    # L psi = w has the closed-form radial solution -(w + r w')/2
    psi = solve_radial_mod_kernel(townes16, townes16.w)
    exact = -0.5 * (townes16.w + townes16.grid.nodes() * townes16.dw)
    assert np.abs(psi - exact).max() < 1e-3 * np.abs(exact).max()


def test_solvability_tracks_criticality(townes16, townes20):
    """Forcing built at a displaced critical point violates orthogonality by
    half the trap-energy gradient."""
    spec = harmonic(2.0, delta=0.05, preset="cos")
    analysis = find_critical_point(spec, townes20)
    grid = matched_grid(townes16, 0.1)
    lop = LinearizedOperator(townes16, grid)
    X, Y = grid.meshes()
    y_bad = analysis.y0 + np.array([0.1, 0.0])
    h_bad = spec.h_at(X + y_bad[0], Y + y_bad[1])
    H_bad = float(grid.inner(h_bad, lop.w**2))
    f_bad = -2 * lop.w**3 / townes16.moments.quartic \
        - 2 * h_bad * lop.w / (spec.p * H_bad)
    with pytest.raises(NotSolvable):
        lop.solve_mod_kernel(f_bad)
    # the kernel component equals dH/dx1 / (p H) to leading order
    comp = grid.inner(f_bad, lop.d1)
    expected = grad_H(spec, townes20, y_bad)[0] / (spec.p * H_bad)
    assert comp == pytest.approx(expected, rel=5e-3)


def test_build_phi_constant_envelope(spec_p2, analysis_p2, corrections_p2):
    assert corrections_p2.phi is None
    assert np.array_equal(corrections_p2.x0, np.zeros(2))


@pytest.fixture(scope="module")
def coarse_lop(townes16):
    return LinearizedOperator(townes16, matched_grid(townes16, 0.1))


def _envelope_spec(m, coeffs):
    return PotentialSpec(p=2.0, h0_samples=angular_samples("one"),
                         envelope_order=m, envelope_coeffs=np.array(coeffs))


def test_build_phi_even_order(coarse_lop, townes20):
    spec = _envelope_spec(2, [0.0, 0.0, 0.1])
    analysis = find_critical_point(spec, townes20)
    phi, x0, _ = build_phi(coarse_lop, spec, analysis)
    assert np.array_equal(x0, np.zeros(2))
    assert np.abs(phi).max() > 0


def test_build_phi_odd_order(coarse_lop, townes20):
    spec = _envelope_spec(3, [0.0, 0.0, 0.0, 0.5])
    analysis = find_critical_point(spec, townes20)
    phi, x0, _ = build_phi(coarse_lop, spec, analysis)
    assert np.isfinite(x0).all()
    assert abs(x0[0]) > 1e-6        # D^(3,0) drives the first component
    assert np.abs(phi).max() > 0


def test_export_field_csv(tmp_path, corrections_p2):
    path = tmp_path / "psi2.csv"
    export_field_csv(path, "psi2", corrections_p2.psi2, 2.0)
    with open(path) as fh:
        header = fh.readline()
        first = fh.readline().split()
    assert header.startswith("# field=psi2 p=2.0 dx=0.05 R=16.0")
    assert len(first) == 3
