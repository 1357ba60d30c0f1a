import math

import numpy as np
import pytest

from spikelab.asymptotics import (ScaleParameters, compute_S,
                                  compute_constants, dispatch_case,
                                  phi_mass_cross_check, predict_energy,
                                  predict_mu, predict_profile,
                                  rescaled_correction_prediction)
from spikelab.errors import WrongCase
from spikelab.grid import CartesianGrid2D
from spikelab.linearized import build_corrections, matched_grid
from spikelab.potential import (PotentialSpec, angular_samples,
                                find_critical_point)
from spikelab.radial import plane_integral


@pytest.fixture(scope="module")
def constants_p2(corrections_p2, townes16, analysis_p2, spec_p2):
    return compute_constants(corrections_p2, townes16, analysis_p2, spec_p2)


def test_scale_parameters(townes16):
    s = ScaleParameters.make(10.0, townes16.a_star, 2.0)
    assert s.alpha == townes16.a_star - 10.0
    assert s.eps == pytest.approx(s.alpha**0.25, rel=1e-14)
    bad = ScaleParameters.make(townes16.a_star + 1.0, townes16.a_star, 2.0)
    with pytest.raises(ValueError):
        bad.eps


def test_constants_p2(constants_p2):
    assert constants_p2.case_tag == "m_gt_2p"
    assert constants_p2.ii_val == pytest.approx(-2.0, abs=0.02)
    assert abs(constants_p2.i_val) < 0.01
    assert not constants_p2.c_star_suspect
    assert abs(constants_p2.i5_val) < 1e-6      # even trap


def test_cstar_definition_consistency(constants_p2, corrections_p2):
    g = corrections_p2.grid
    w = corrections_p2.diagnostics["operator"].w
    direct = 2.0 * g.inner(w, corrections_p2.psi3.values) \
        + g.inner(corrections_p2.psi1.values, corrections_p2.psi1.values)
    assert (2 + 2.0) / 2.0 * constants_p2.c_star == pytest.approx(direct, rel=1e-14)


def test_beta_consistency(constants_p2, corrections_p2):
    # -(2+p)/2 beta + alpha (2 int w psi3 + int psi1^2) = 0 with beta = C* alpha
    g = corrections_p2.grid
    w = corrections_p2.diagnostics["operator"].w
    bracket = 2.0 * g.inner(w, corrections_p2.psi3.values) \
        + g.inner(corrections_p2.psi1.values, corrections_p2.psi1.values)
    alpha = 0.037
    beta = constants_p2.c_star * alpha
    assert -(2 + 2.0) / 2.0 * beta + alpha * bracket == pytest.approx(0.0, abs=1e-15)


def test_dispatch_totality():
    p = 2.0
    cases = {
        (None, None): "m_gt_2p",
        (7, None): "m_gt_2p",
        (3, None): "m_le_2p_odd",
        (2, 0.0): "m_lt_2p_even_S0",
        (2, 0.5): "m_lt_2p_even_Snz",
        (4, 0.5): "m_eq_2p_even",
    }
    seen = set()
    for (m, s), want in cases.items():
        tag = dispatch_case(p, m, s)
        assert tag == want
        seen.add(tag)
    assert len(seen) == 5


def _envelope_spec(m, coeffs, p=2.0):
    return PotentialSpec(p=p, h0_samples=angular_samples("one"),
                         envelope_order=m, envelope_coeffs=np.array(coeffs))


def test_compute_S_zero_coeffs(townes16):
    spec = _envelope_spec(2, [0.0, 0.0, 0.0])
    s, scale = compute_S(spec, townes16)
    assert s == 0.0


def test_compute_S_cross_moment(townes16):
    # x1 x2 |x|^2 integrates to zero against the radial weight
    spec = _envelope_spec(2, [0.0, 0.3, 0.0])
    s, scale = compute_S(spec, townes16)
    assert abs(s) < 1e-12 * max(scale, 1.0)


def test_compute_S_quadrature(townes16):
    # D^(2,0) g = c: S = (c/2) int x1^2 |x|^2 w^2 = (c/4) int |x|^4 w^2
    c = 0.1
    spec = _envelope_spec(2, [0.0, 0.0, c])
    s, _ = compute_S(spec, townes16)
    r = townes16.grid.nodes()
    m4 = plane_integral(townes16.grid, r**4 * townes16.w**2)
    assert s == pytest.approx(c / 4.0 * m4, rel=1e-9)


@pytest.fixture(scope="module")
def envelope_case(townes16, townes20):
    spec = _envelope_spec(2, [0.0, 0.0, 0.1])
    analysis = find_critical_point(spec, townes20)
    corr = build_corrections(townes16, spec, analysis,
                             grid=matched_grid(townes16, 0.1))
    constants = compute_constants(corr, townes16, analysis, spec)
    return spec, analysis, corr, constants


def test_phi_mass_cross_check(envelope_case, townes16):
    spec, analysis, corr, constants = envelope_case
    w2d = corr.diagnostics["operator"].w
    lhs, rhs = phi_mass_cross_check(spec, analysis, corr, townes16, w2d)
    assert lhs == pytest.approx(rhs, rel=1e-3)
    assert constants.case_tag == "m_lt_2p_even_Snz"
    assert constants.c1_star == pytest.approx(
        -(2 + 2.0) / ((2 + 2.0) * analysis.lam_pow(2 + 2.0 + 2)) * constants.s_val,
        rel=1e-12)


def test_predict_mu_formula(constants_p2, analysis_p2, townes16):
    s = ScaleParameters.make(townes16.a_star - 1e-4, townes16.a_star, 2.0)
    mu = predict_mu(constants_p2, analysis_p2, s)
    lam2 = analysis_p2.lam**2
    assert mu == pytest.approx(-lam2 / s.eps**2 + lam2 * constants_p2.c_star
                               * s.eps**2, rel=1e-14)
    # leading order: mu eps^2 / lambda^2 -> -1
    assert mu * s.eps**2 / lam2 == pytest.approx(-1.0, abs=1e-2)


def test_predict_mu_degenerate_guard(constants_p2, analysis_p2, townes16):
    from dataclasses import replace
    c0 = replace(constants_p2, c_star=0.0)
    s = ScaleParameters.make(townes16.a_star - 0.1, townes16.a_star, 2.0)
    mu = predict_mu(c0, analysis_p2, s)
    assert mu == pytest.approx(-analysis_p2.lam**2 / s.eps**2, rel=1e-15)


def test_predict_mu_wrong_case(envelope_case, townes16):
    spec, analysis, corr, constants = envelope_case
    s = ScaleParameters.make(townes16.a_star - 0.1, townes16.a_star, 2.0)
    with pytest.raises(WrongCase):
        predict_mu(constants, analysis, s)


def test_predict_energy(analysis_p2, townes16):
    a_star = townes16.a_star
    s = ScaleParameters.make(0.99 * a_star, a_star, 2.0)
    e = predict_energy(analysis_p2, s, a_star)
    assert e == pytest.approx(2 * analysis_p2.lam**2 / a_star
                              * math.sqrt(s.alpha), rel=1e-14)
    near = predict_energy(analysis_p2,
                          ScaleParameters.make((1 - 1e-12) * a_star, a_star, 2.0),
                          a_star)
    assert near < 1e-5


def test_predict_energy_scaling_in_h(townes16, townes20):
    # doubling the trap doubles lambda^{2+p}, so e scales by 2^{2/(2+p)}
    spec1 = PotentialSpec(p=2.0, h0_samples=angular_samples("one"), g0=1.0)
    spec2 = PotentialSpec(p=2.0, h0_samples=angular_samples("one"), g0=2.0)
    an1 = find_critical_point(spec1, townes20)
    an2 = find_critical_point(spec2, townes20)
    s = ScaleParameters.make(0.95 * townes16.a_star, townes16.a_star, 2.0)
    r = predict_energy(an2, s, townes16.a_star) / predict_energy(an1, s, townes16.a_star)
    assert r == pytest.approx(2 ** (2.0 / 4.0), rel=1e-12)


def test_predict_energy_own_slope(analysis_p2, townes16):
    a_star = townes16.a_star
    alphas = np.array([0.5, 0.1, 0.02])
    es = [predict_energy(analysis_p2, ScaleParameters.make(a_star - al, a_star, 2.0),
                         a_star) for al in alphas]
    slope = np.polyfit(np.log(alphas), np.log(es), 1)[0]
    assert slope == pytest.approx(0.5, abs=1e-12)


def test_predict_energy_slope_p3(townes16, townes20):
    from spikelab.potential import harmonic
    an = find_critical_point(harmonic(3.0), townes20)
    a_star = townes16.a_star
    alphas = np.array([0.5, 0.1, 0.02])
    es = [predict_energy(an, ScaleParameters.make(a_star - al, a_star, 3.0),
                         a_star) for al in alphas]
    slope = np.polyfit(np.log(alphas), np.log(es), 1)[0]
    assert slope == pytest.approx(0.6, abs=1e-12)


@pytest.fixture(scope="module")
def target_grid():
    return CartesianGrid2D(half_width=4.5, step=4.5 / 64)


def test_predict_profile_leading(constants_p2, corrections_p2, analysis_p2,
                                 townes16, target_grid):
    s = ScaleParameters.make(0.95 * townes16.a_star, townes16.a_star, 2.0)
    pred = predict_profile(constants_p2, corrections_p2, analysis_p2, townes16,
                           s, "leading", target_grid, renormalize=False)
    X, Y = target_grid.meshes()
    r = np.hypot(X, Y)
    lam = analysis_p2.lam
    manual = lam / math.sqrt(townes16.a_star) / s.eps * townes16.w_at(lam * r / s.eps)
    assert np.abs(pred.u_pred.values - manual).max() < 1e-12
    assert np.array_equal(pred.x_pred, np.zeros(2))


def test_predict_profile_norm(constants_p2, corrections_p2, analysis_p2,
                              townes16, target_grid):
    # eps = 0.2: corrections nearly preserve the norm since int w psi_i = 0
    a = townes16.a_star - 0.2 ** (2 + 2.0)
    s = ScaleParameters.make(a, townes16.a_star, 2.0)
    pred = predict_profile(constants_p2, corrections_p2, analysis_p2, townes16,
                           s, "alpha2", target_grid)
    assert abs(pred.norm_before_projection - 1.0) < 1e-3
    assert pred.u_pred.grid.norm2(pred.u_pred.values) == pytest.approx(1.0, rel=1e-12)
    assert pred.mu_pred is not None
    assert pred.order == "alpha2"


def test_predict_profile_rejects_bad_order(constants_p2, corrections_p2,
                                           analysis_p2, townes16, target_grid):
    s = ScaleParameters.make(0.95 * townes16.a_star, townes16.a_star, 2.0)
    with pytest.raises(ValueError):
        predict_profile(constants_p2, corrections_p2, analysis_p2, townes16,
                        s, "third", target_grid)


def test_rescaled_prediction_orders(constants_p2, corrections_p2, townes16):
    s = ScaleParameters.make(0.99 * townes16.a_star, townes16.a_star, 2.0)
    w1 = rescaled_correction_prediction(constants_p2, corrections_p2, s, "alpha")
    w2 = rescaled_correction_prediction(constants_p2, corrections_p2, s, "alpha2")
    expected1 = s.alpha * (corrections_p2.psi1.values
                           + constants_p2.c_star * corrections_p2.psi2.values)
    assert np.abs(w1 - expected1).max() < 1e-14
    bracket = (corrections_p2.psi3.values
               + constants_p2.c_star**2 * corrections_p2.psi4.values
               + constants_p2.c_star * corrections_p2.psi5.values)
    assert np.abs(w2 - expected1 - s.alpha**2 * bracket).max() < 1e-14
