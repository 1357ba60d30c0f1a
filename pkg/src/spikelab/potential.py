"""Trapping potentials V = g*h with h homogeneous of degree p.

h(x) = |x|^p * (1 + delta*h0(theta)) with the angular factor stored as uniform
samples and evaluated by trigonometric interpolation; its gradient is formed
analytically in polar form, never by differencing, because it enters the
solvability integrals that decide whether the correction equations can be
solved at all.

The trap energy of a bubble at y is H(y) = int h(x+y) w^2(x) dx, evaluated in
polar coordinates: Simpson in r on the profile grid, uniform (spectrally
accurate) rule in the angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NoConvergence
from .radial import TownesProfile

N_ANGLE = 256

#: length unit of the rescaled problem (the profile width is O(1) in w-units)
LEN_SCALE = 1.0

ANGULAR_PRESETS = {
    "one": lambda t: np.ones_like(t),
    "cos": np.cos,
    "sin": np.sin,
    "cos+sin": lambda t: np.cos(t) + np.sin(t),
}


def angular_samples(preset: str, n: int = N_ANGLE) -> np.ndarray:
    try:
        fn = ANGULAR_PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown angular preset {preset!r}") from None
    return fn(np.arange(n) * (2 * math.pi / n))


class _TrigSeries:
    """Truncated Fourier series through uniform samples on [0, 2pi)."""

    def __init__(self, samples: np.ndarray):
        n = samples.size
        c = np.fft.rfft(samples) / n
        weights = np.full(c.size, 2.0)
        weights[0] = 1.0
        if n % 2 == 0:
            weights[-1] = 1.0
        keep = np.abs(c) > 1e-13 * max(1.0, np.abs(samples).max())
        self.k = np.nonzero(keep)[0].astype(float)
        self.c = c[keep] * weights[keep]

    def value(self, theta: np.ndarray) -> np.ndarray:
        if self.k.size == 0:
            return np.zeros_like(theta)
        ph = np.exp(1j * np.multiply.outer(theta, self.k))
        return (ph @ self.c).real

    def deriv(self, theta: np.ndarray) -> np.ndarray:
        if self.k.size == 0:
            return np.zeros_like(theta)
        ph = np.exp(1j * np.multiply.outer(theta, self.k))
        return (ph @ (1j * self.k * self.c)).real


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Homogeneous trap h plus an optional smooth envelope factor g.

    envelope_order m is the first order with a nonvanishing derivative of
    g - g(0) at the origin; None encodes m = infinity, i.e. g == g0.
    envelope_coeffs[j] = D^(j, m-j) g(0) for j = 0..m.  When no full evaluator
    is supplied, g is represented by its Taylor polynomial g0 + G_m(x); run
    entry points check positivity of that polynomial on their domain.
    """

    p: float
    h0_samples: np.ndarray
    delta: float = 0.0
    g0: float = 1.0
    envelope_order: Optional[int] = None
    envelope_coeffs: Optional[np.ndarray] = None
    envelope_eval: Optional[Callable] = None

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("homogeneity degree must be >= 2")
        if self.g0 <= 0:
            raise ValueError("g(0) must be positive")
        if self.envelope_order is not None:
            m = self.envelope_order
            if m < 2:
                raise ValueError("envelope order must be >= 2")
            if self.envelope_coeffs is None or len(self.envelope_coeffs) != m + 1:
                raise ValueError("need m+1 envelope coefficients")
        samples = np.asarray(self.h0_samples, dtype=float)
        object.__setattr__(self, "h0_samples", samples)
        if np.any(1.0 + self.delta * samples < 0):
            raise ValueError("1 + delta*h0 must be nonnegative")
        object.__setattr__(self, "_series", _TrigSeries(samples))

    # -- angular factor -------------------------------------------------

    def angular(self, theta: np.ndarray) -> np.ndarray:
        """F(theta) = 1 + delta*h0(theta)."""
        if self.delta == 0.0:
            return np.ones_like(np.asarray(theta, dtype=float))
        return 1.0 + self.delta * self._series.value(theta)

    def angular_deriv(self, theta: np.ndarray) -> np.ndarray:
        if self.delta == 0.0:
            return np.zeros_like(np.asarray(theta, dtype=float))
        return self.delta * self._series.deriv(theta)

    def is_even(self) -> bool:
        """h(-x) = h(x), i.e. the angular factor is pi-periodic."""
        s = self.h0_samples
        if self.delta == 0.0:
            return True
        n = s.size
        if n % 2 != 0:
            return False
        shifted = np.roll(s, n // 2)
        return bool(np.abs(shifted - s).max() <= 1e-12 * max(1.0, np.abs(s).max()))

    # -- pointwise values -----------------------------------------------

    def h_at(self, zx: np.ndarray, zy: np.ndarray) -> np.ndarray:
        """h at arbitrary points; h(0) = 0 by homogeneity with p > 0."""
        rho = np.hypot(zx, zy)
        return rho**self.p * self.angular(np.arctan2(zy, zx))

    def grad_h_at(self, zx: np.ndarray, zy: np.ndarray):
        """Analytic gradient of h in polar form (zero at the origin)."""
        rho = np.hypot(zx, zy)
        phi = np.arctan2(zy, zx)
        F = self.angular(phi)
        dF = self.angular_deriv(phi)
        radial = np.where(rho > 0, rho ** (self.p - 1), 0.0)
        cs, sn = np.cos(phi), np.sin(phi)
        hx = radial * (self.p * F * cs - dF * sn)
        hy = radial * (self.p * F * sn + dF * cs)
        return hx, hy

    # -- envelope ---------------------------------------------------------

    def is_constant_envelope(self) -> bool:
        return self.envelope_order is None and self.envelope_eval is None

    def g_at(self, zx: np.ndarray, zy: np.ndarray) -> np.ndarray:
        if self.envelope_eval is not None:
            return np.asarray(self.envelope_eval(zx, zy), dtype=float)
        out = np.full(np.broadcast(zx, zy).shape, self.g0, dtype=float)
        if self.envelope_order is not None:
            out += self.envelope_taylor_term(zx, zy)
        return out

    def envelope_taylor_term(self, zx: np.ndarray, zy: np.ndarray) -> np.ndarray:
        """G_m(x) = sum_{|alpha|=m} x^alpha / alpha! * D^alpha g(0)."""
        m = self.envelope_order
        out = np.zeros(np.broadcast(zx, zy).shape, dtype=float)
        for j, coef in enumerate(self.envelope_coeffs):
            if coef != 0.0:
                out += coef / (math.factorial(j) * math.factorial(m - j)) \
                    * zx**j * zy ** (m - j)
        return out

    def v_at(self, zx: np.ndarray, zy: np.ndarray) -> np.ndarray:
        """Full trap V = g*h."""
        h = self.h_at(zx, zy)
        if self.is_constant_envelope():
            return self.g0 * h
        return self.g_at(zx, zy) * h

    def grad_v_at(self, zx: np.ndarray, zy: np.ndarray):
        hx, hy = self.grad_h_at(zx, zy)
        if self.is_constant_envelope():
            return self.g0 * hx, self.g0 * hy
        if self.envelope_eval is not None:
            raise NotImplementedError("analytic grad V needs the Taylor envelope")
        g = self.g_at(zx, zy)
        m = self.envelope_order
        gx = np.zeros(np.broadcast(zx, zy).shape, dtype=float)
        gy = np.zeros_like(gx)
        for j, coef in enumerate(self.envelope_coeffs):
            if coef != 0.0:
                c = coef / (math.factorial(j) * math.factorial(m - j))
                if j >= 1:
                    gx += c * j * zx ** (j - 1) * zy ** (m - j)
                if m - j >= 1:
                    gy += c * (m - j) * zx**j * zy ** (m - j - 1)
        h = self.h_at(zx, zy)
        return g * hx + gx * h, g * hy + gy * h


def harmonic(p: float = 2.0, delta: float = 0.0, preset: str = "one",
             g0: float = 1.0) -> PotentialSpec:
    """Convenience constructor h = |x|^p [1 + delta*h0]."""
    return PotentialSpec(p=p, h0_samples=angular_samples(preset), delta=delta, g0=g0)


@dataclass(frozen=True)
class PotentialAnalysis:
    y0: np.ndarray
    H0: float
    hessH: np.ndarray
    lam: float
    nondegenerate: bool
    lam_base: float     # lambda^{2+p} = p*g0/2 * H(y0), kept unrounded
    p: float

    def lam_pow(self, q: float) -> float:
        """lambda^q formed from the lambda^{2+p} base, not by powering lam."""
        return self.lam_base ** (q / (2.0 + self.p))


# -- polar quadrature over the profile disk ----------------------------------

def _polar_weights(townes: TownesProfile):
    g = townes.grid
    r = g.nodes()
    wts = np.ones(g.count + 1)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    wts *= g.step / 3.0
    return r, wts * r * townes.w**2


def eval_H(spec: PotentialSpec, townes: TownesProfile, y) -> float:
    """H(y) = int h(x+y) w^2(x) dx."""
    y = np.asarray(y, dtype=float)
    r, rad_w = _polar_weights(townes)
    theta = np.arange(N_ANGLE) * (2 * math.pi / N_ANGLE)
    zx = np.multiply.outer(r, np.cos(theta)) + y[0]
    zy = np.multiply.outer(r, np.sin(theta)) + y[1]
    hv = spec.h_at(zx, zy)
    return float(rad_w @ hv.sum(axis=1)) * (2 * math.pi / N_ANGLE)


def grad_H(spec: PotentialSpec, townes: TownesProfile, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    r, rad_w = _polar_weights(townes)
    theta = np.arange(N_ANGLE) * (2 * math.pi / N_ANGLE)
    zx = np.multiply.outer(r, np.cos(theta)) + y[0]
    zy = np.multiply.outer(r, np.sin(theta)) + y[1]
    hx, hy = spec.grad_h_at(zx, zy)
    scale = 2 * math.pi / N_ANGLE
    return np.array([float(rad_w @ hx.sum(axis=1)) * scale,
                     float(rad_w @ hy.sum(axis=1)) * scale])


def hess_H(spec: PotentialSpec, townes: TownesProfile, y,
           step: float = 1e-5) -> np.ndarray:
    """Hessian of H by central differences of the analytic gradient."""
    y = np.asarray(y, dtype=float)
    out = np.empty((2, 2))
    for j in range(2):
        dy = np.zeros(2)
        dy[j] = step
        out[:, j] = (grad_H(spec, townes, y + dy)
                     - grad_H(spec, townes, y - dy)) / (2 * step)
    return 0.5 * (out + out.T)


def find_critical_point(spec: PotentialSpec, townes: TownesProfile,
                        grad_tol: float = 1e-9, nd_tol: float = 1e-8,
                        max_iter: int = 60) -> PotentialAnalysis:
    """Locate the critical point of H, certify non-degeneracy, produce lambda.

    Even traps are dispatched to y0 = 0 exactly (then verified); otherwise a
    safeguarded Newton iteration from the origin, falling back to Armijo
    gradient descent when the Hessian is unusable.
    """
    if spec.is_even():
        y0 = np.zeros(2)
    else:
        y0 = np.zeros(2)
        H_here = eval_H(spec, townes, y0)
        for _ in range(max_iter):
            g = grad_H(spec, townes, y0)
            if np.abs(g).max() <= grad_tol * max(abs(H_here), 1e-30):
                break
            hess = hess_H(spec, townes, y0)
            det = hess[0, 0] * hess[1, 1] - hess[0, 1] * hess[1, 0]
            scale = (abs(H_here) / LEN_SCALE**2) ** 2
            use_newton = abs(det) > nd_tol * scale
            step_vec = (np.linalg.solve(hess, -g) if use_newton
                        else -g * (LEN_SCALE**2 / max(abs(H_here), 1e-30)))
            t = 1.0
            for _ in range(40):
                trial = y0 + t * step_vec
                H_trial = eval_H(spec, townes, trial)
                g_trial = grad_H(spec, townes, trial)
                if np.abs(g_trial).max() < np.abs(g).max() or H_trial < H_here:
                    break
                t *= 0.5
            else:
                raise NoConvergence("line search stalled in critical-point solve")
            y0 = y0 + t * step_vec
            H_here = eval_H(spec, townes, y0)
        else:
            raise NoConvergence(f"no critical point within {max_iter} iterations")

    H0 = eval_H(spec, townes, y0)
    g_final = grad_H(spec, townes, y0)
    if not spec.is_even() and np.abs(g_final).max() > 1e2 * grad_tol * max(abs(H0), 1e-30):
        raise NoConvergence("gradient did not meet tolerance at the critical point")
    hess = hess_H(spec, townes, y0)
    det = hess[0, 0] * hess[1, 1] - hess[0, 1] * hess[1, 0]
    nondeg = bool(abs(det) > nd_tol * (abs(H0) / LEN_SCALE**2) ** 2)
    base = spec.p * spec.g0 / 2.0 * H0
    lam = base ** (1.0 / (2.0 + spec.p))
    return PotentialAnalysis(y0=y0, H0=H0, hessH=hess, lam=lam,
                             nondegenerate=nondeg, lam_base=base, p=spec.p)


def check_kernel_orthogonality(spec: PotentialSpec, analysis: PotentialAnalysis,
                               townes: TownesProfile, y=None) -> np.ndarray:
    """The pair <dw/dx_j, h(.+y) w> for j = 1, 2 (polar quadrature).

    Equals -grad H(y)/2, so it vanishes exactly at the certified critical
    point; calling it at a displaced y gives the corresponding half-gradient.
    """
    y = analysis.y0 if y is None else np.asarray(y, dtype=float)
    g = townes.grid
    r = g.nodes()
    wts = np.ones(g.count + 1)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    wts *= g.step / 3.0
    rad = wts * r * townes.w * townes.dw
    theta = np.arange(N_ANGLE) * (2 * math.pi / N_ANGLE)
    cs, sn = np.cos(theta), np.sin(theta)
    zx = np.multiply.outer(r, cs) + y[0]
    zy = np.multiply.outer(r, sn) + y[1]
    hv = spec.h_at(zx, zy)
    scale = 2 * math.pi / N_ANGLE
    return np.array([float(rad @ (hv @ cs)) * scale,
                     float(rad @ (hv @ sn)) * scale])


def euler_relation_residual(spec: PotentialSpec, analysis: PotentialAnalysis,
                            townes: TownesProfile) -> float:
    """Relative residual of int w^2 (x+y0).grad h(x+y0) = p H(y0)."""
    y = analysis.y0
    r, rad_w = _polar_weights(townes)
    theta = np.arange(N_ANGLE) * (2 * math.pi / N_ANGLE)
    zx = np.multiply.outer(r, np.cos(theta)) + y[0]
    zy = np.multiply.outer(r, np.sin(theta)) + y[1]
    hx, hy = spec.grad_h_at(zx, zy)
    integrand = zx * hx + zy * hy
    val = float(rad_w @ integrand.sum(axis=1)) * (2 * math.pi / N_ANGLE)
    return (val - spec.p * analysis.H0) / (spec.p * analysis.H0)
