"""Expansion constants and closed-form predictors for the near-critical limit.

Knowing the correction fields, everything else is quadrature: the constants
linking the multiplier defect beta = 1 + mu eps^2/lambda^2 to the distance
alpha = a* - a, the branch of the envelope case analysis that applies, and the
assembled profile/energy/multiplier predictions at a given truncation order.

On the multiplier: the defect relation beta = C alpha forces
mu = -lambda^2/eps^2 + lambda^2 C eps^p, i.e. the leading coefficient is
lambda squared.  (The first-order printed form of the multiplier expansion
carries a bare lambda there, which is inconsistent with the definition of
beta; this module implements the squared form.)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import WrongCase
from .grid import CartesianGrid2D, Field2D
from .linearized import CorrectionSet
from .potential import N_ANGLE, PotentialAnalysis, PotentialSpec
from .radial import TownesProfile

CASE_TAGS = ("m_gt_2p", "m_le_2p_odd", "m_lt_2p_even_S0",
             "m_lt_2p_even_Snz", "m_eq_2p_even")

#: |S| below this (relative to the largest contributing moment) counts as zero
S_ZERO_RTOL = 1e-9


@dataclass(frozen=True)
class ScaleParameters:
    """Distance-to-criticality bookkeeping for one interaction strength."""

    a: float
    a_star: float

    @property
    def alpha(self) -> float:
        return self.a_star - self.a

    @property
    def eps(self) -> float:
        if self.a >= self.a_star:
            raise ValueError("scales are defined only for a < a*")
        return self.alpha ** (1.0 / (2.0 + self._p))

    _p: float = 2.0

    @staticmethod
    def make(a: float, a_star: float, p: float) -> "ScaleParameters":
        return ScaleParameters(a=a, a_star=a_star, _p=p)

    def beta(self, mu: float, lam: float) -> float:
        return 1.0 + mu * self.eps**2 / lam**2


@dataclass(frozen=True)
class AsymptoticConstants:
    c_star: float
    c1_star: Optional[float]
    c2_star: Optional[float]
    s_val: Optional[float]
    i_val: float
    ii_val: float
    i5_val: float
    case_tag: str
    p: float
    m: Optional[int]
    c_star_suspect: bool    # flagged when |C*| is numerically tiny


def dispatch_case(p: float, m: Optional[int], s_val: Optional[float],
                  s_scale: float = 1.0) -> str:
    """Branch of the envelope case analysis; total over all inputs."""
    if m is None or m > 2 + p:
        return "m_gt_2p"
    if m % 2 == 1:          # m <= 2+p odd
        return "m_le_2p_odd"
    if abs(m - (2 + p)) < 1e-12:
        return "m_eq_2p_even"
    # m < 2+p even: split on S
    if s_val is None or abs(s_val) <= S_ZERO_RTOL * max(s_scale, 1e-30):
        return "m_lt_2p_even_S0"
    return "m_lt_2p_even_Snz"


def compute_S(spec: PotentialSpec, townes: TownesProfile) -> tuple[float, float]:
    """S = sum_{|alpha|=m} int (x^alpha/alpha!) D^alpha g(0) h(x) w^2.

    Returns (S, scale) where scale is the largest absolute single-term
    contribution, used to decide whether S is numerically zero.
    """
    if spec.envelope_order is None:
        return 0.0, 0.0
    g = townes.grid
    r = g.nodes()
    wts = np.ones(g.count + 1)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    wts *= g.step / 3.0
    rad = wts * r * townes.w**2
    theta = np.arange(N_ANGLE) * (2 * math.pi / N_ANGLE)
    zx = np.multiply.outer(r, np.cos(theta))
    zy = np.multiply.outer(r, np.sin(theta))
    hv = spec.h_at(zx, zy)
    m_ord = spec.envelope_order
    total, scale = 0.0, 0.0
    dtheta = 2 * math.pi / N_ANGLE
    for j, coef in enumerate(spec.envelope_coeffs):
        if coef == 0.0:
            continue
        term_field = (coef / (math.factorial(j) * math.factorial(m_ord - j))
                      * zx**j * zy ** (m_ord - j) * hv)
        term = float(rad @ term_field.sum(axis=1)) * dtheta
        total += term
        scale = max(scale, abs(term))
    return total, scale


def phi_mass_cross_check(spec: PotentialSpec, analysis: PotentialAnalysis,
                         corrections: CorrectionSet, townes: TownesProfile,
                         w2d: np.ndarray) -> tuple[float, float]:
    """(2 int w phi, -(m+p) S / (2 lambda^{2+p+m})) for the even-order case."""
    if corrections.phi is None or spec.envelope_order is None:
        raise WrongCase("cross-check needs a finite envelope order")
    m_ord = spec.envelope_order
    lhs = 2.0 * corrections.grid.inner(w2d, corrections.phi.values)
    s_val, _ = compute_S(spec, townes)
    rhs = -(m_ord + spec.p) * s_val / (2.0 * analysis.lam_pow(2 + spec.p + m_ord))
    return lhs, rhs


def compute_constants(corrections: CorrectionSet, townes: TownesProfile,
                      analysis: PotentialAnalysis,
                      spec: PotentialSpec) -> AsymptoticConstants:
    g = corrections.grid
    lop = corrections.diagnostics["operator"]
    w = lop.w
    p = spec.p
    psi1 = corrections.psi1.values
    psi2 = corrections.psi2.values
    psi3 = corrections.psi3.values
    psi4 = corrections.psi4.values
    psi5 = corrections.psi5.values

    c_star = 2.0 / (2.0 + p) * (2.0 * g.inner(w, psi3) + g.inner(psi1, psi1))
    i_val = g.integrate(2.0 * w * psi4 + psi2**2)
    ii_val = 2.0 * g.inner(w, psi5) + 2.0 * g.inner(psi1, psi2)

    X, Y = g.meshes()
    h_shift = spec.h_at(X + analysis.y0[0], Y + analysis.y0[1])
    i5_val = (3.0 / townes.a_star * g.inner(lop.d1, w**2 * psi1)
              + g.inner(lop.d1, h_shift * psi1) / analysis.lam_base
              - 3.0 * g.inner(lop.d1, w * psi1**2))

    s_val, s_scale = (None, 0.0)
    c1_star = None
    c2_star = None
    m_ord = spec.envelope_order
    if m_ord is not None:
        s_val, s_scale = compute_S(spec, townes)
        if m_ord % 2 == 0 and m_ord < 2 + p:
            c1_star = (-(m_ord + p) / ((2.0 + p) * analysis.lam_pow(2 + p + m_ord))
                       * s_val)
        if m_ord % 2 == 0 and abs(m_ord - (2 + p)) < 1e-12 and corrections.phi is not None:
            c2_star = (2.0 / (2.0 + p)
                       * (2.0 * g.inner(w, psi3) + g.inner(psi1, psi1)
                          + 2.0 * g.inner(w, corrections.phi.values)))

    tag = dispatch_case(p, m_ord, s_val, s_scale)
    return AsymptoticConstants(
        c_star=c_star, c1_star=c1_star, c2_star=c2_star, s_val=s_val,
        i_val=i_val, ii_val=ii_val, i5_val=i5_val, case_tag=tag,
        p=p, m=m_ord, c_star_suspect=bool(abs(c_star) < 1e-6))


def predict_mu(constants: AsymptoticConstants, analysis: PotentialAnalysis,
               scale: ScaleParameters) -> float:
    """mu = -lambda^2/eps^2 + lambda^2 C* eps^p (base homogeneous case)."""
    if constants.m is not None:
        raise WrongCase(f"multiplier prediction applies to the constant-envelope "
                        f"case, not {constants.case_tag}")
    lam2 = analysis.lam**2
    eps = scale.eps
    return -lam2 / eps**2 + lam2 * constants.c_star * eps**constants.p


def predict_energy(analysis: PotentialAnalysis, scale: ScaleParameters,
                   a_star: float) -> float:
    """e = (lambda^2/a*) (p+2)/p * (a*-a)^{p/(2+p)}."""
    p = analysis.p
    return (analysis.lam**2 / a_star) * (p + 2.0) / p \
        * scale.alpha ** (p / (2.0 + p))


@dataclass(frozen=True)
class ExpansionPrediction:
    u_pred: Field2D
    mu_pred: Optional[float]
    e_pred: float
    x_pred: np.ndarray
    order: str
    norm_before_projection: float


def _term_ladder(constants: AsymptoticConstants, corrections: CorrectionSet,
                 eps: float):
    """(coefficient, field-array, stage) triples for the active branch."""
    p = constants.p
    c = corrections
    tag = constants.case_tag
    if tag == "m_lt_2p_even_Snz":
        if constants.c1_star is None:
            raise WrongCase("branch needs C1* but it was not computed")
        c1 = constants.c1_star
        return [
            (eps ** (constants.m - 1) * c1, c.psi2.values, "alpha"),
            (eps ** (1 + p), c.psi1.values, "alpha"),
            (eps ** (2 * constants.m - 1) * c1**2, c.psi4.values, "alpha2"),
        ]
    if tag == "m_eq_2p_even" and constants.c2_star is None:
        raise WrongCase("branch needs C2* but it was not computed")
    cc = constants.c2_star if tag == "m_eq_2p_even" else constants.c_star
    ladder = [
        (eps ** (1 + p), c.psi1.values + cc * c.psi2.values, "alpha"),
        (eps ** (3 + 2 * p),
         c.psi3.values + cc**2 * c.psi4.values + cc * c.psi5.values, "alpha2"),
    ]
    if tag == "m_eq_2p_even":
        ladder.append((eps ** (3 + 2 * p), c.phi.values, "alpha2"))
    elif tag in ("m_le_2p_odd", "m_lt_2p_even_S0") and c.phi is not None:
        ladder.append((eps ** (1 + constants.m + p), c.phi.values, "alpha2"))
    return ladder


def predict_profile(constants: AsymptoticConstants, corrections: CorrectionSet,
                    analysis: PotentialAnalysis, townes: TownesProfile,
                    scale: ScaleParameters, order: str,
                    target: CartesianGrid2D,
                    renormalize: bool = True) -> ExpansionPrediction:
    """Assemble the predicted minimizer on the target grid.

    order is one of "leading", "alpha", "alpha2" (cumulative truncations).
    """
    if order not in ("leading", "alpha", "alpha2"):
        raise ValueError(f"unknown truncation order {order!r}")
    eps = scale.eps
    lam = analysis.lam
    p = constants.p

    if constants.m is None:
        x_pred = (eps / lam) * analysis.y0
        if order == "alpha2":
            x_pred = (eps / lam) * (analysis.y0 + scale.alpha * corrections.y_sup)
        mu_pred = predict_mu(constants, analysis, scale)
    else:
        x_pred = np.zeros(2)
        mu_pred = None

    X, Y = target.meshes()
    zx = lam * (X - x_pred[0]) / eps
    zy = lam * (Y - x_pred[1]) / eps
    rr = np.hypot(zx, zy)
    vals = townes.w_at(rr) / eps
    if order != "leading":
        stages = {"alpha": ("alpha",), "alpha2": ("alpha", "alpha2")}[order]
        cg = corrections.grid
        for coef, arr, stage in _term_ladder(constants, corrections, eps):
            if stage not in stages or coef == 0.0:
                continue
            spl = RectBivariateSpline(cg.interior, cg.interior, arr, kx=3, ky=3)
            inside = (np.abs(zx) <= cg.half_width) & (np.abs(zy) <= cg.half_width)
            term = np.zeros_like(vals)
            term[inside] = spl.ev(zx[inside], zy[inside])
            vals = vals + coef * term
    vals *= lam / math.sqrt(townes.a_star)
    norm = target.norm2(vals)
    if renormalize and norm > 0:
        vals = vals / norm
    e_pred = predict_energy(analysis, scale, townes.a_star)
    return ExpansionPrediction(u_pred=Field2D(grid=target, values=vals),
                               mu_pred=mu_pred, e_pred=e_pred, x_pred=x_pred,
                               order=order, norm_before_projection=norm)


def rescaled_correction_prediction(constants: AsymptoticConstants,
                                   corrections: CorrectionSet,
                                   scale: ScaleParameters, order: str) -> np.ndarray:
    """Predicted w_k = ubar_k - w on the correction grid.

    First order is alpha (psi1 + C psi2); second order adds
    alpha^2 (psi3 + C^2 psi4 + C psi5) (branch-adjusted).
    """
    eps = scale.eps
    out = np.zeros((corrections.grid.m, corrections.grid.m))
    stages = {"alpha": ("alpha",), "alpha2": ("alpha", "alpha2")}[order]
    for coef, arr, stage in _term_ladder(constants, corrections, eps):
        if stage in stages:
            out = out + coef * eps * arr
    return out
