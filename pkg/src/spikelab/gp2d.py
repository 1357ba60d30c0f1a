"""Direct constrained minimization of the Gross-Pitaevskii energy.

The flow is the normalized gradient descent u <- P[(1 - tau Delta_h)^{-1}
((1 + tau mu(u)) u - tau (V u - a u^3))] where P projects back to the unit
L2 sphere and mu(u) is the current multiplier estimate.  Including the
mu(u) u term makes the fixed point satisfy the discrete Euler-Lagrange
equation exactly (without it the kinetic term acquires an O(tau |mu|) bias).
The Laplacian solve is exact through sine transforms, so one step costs two
transforms and one stencil application.

The time step starts at 0.1, halves whenever the energy increases beyond the
rounding budget (floor 1e-4), and is allowed to creep back up to a stability
cap estimated from the explicit terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .asymptotics import ScaleParameters
from .errors import BallOutsideGrid, Collapse, GridTooCoarse, NoConvergence
from .grid import CartesianGrid2D, DiscreteLaplacian, Field2D
from .potential import PotentialAnalysis, PotentialSpec
from .radial import TownesProfile

#: refuse interaction strengths within this relative margin of the threshold
COLLAPSE_MARGIN = 1e-3

#: minimum number of cells across the expected spike width eps/lambda
MIN_CELLS_PER_WIDTH = 12


@dataclass
class FlowOptions:
    tau0: float = 0.1
    tau_floor: float = 1e-4
    el_tol: float = 3e-9           # relative EL residual target
    max_iter: int = 200000
    check_every: int = 50
    grow_every: int = 50
    grow_factor: float = 1.2
    plateau_window: int = 60       # residual checks, not iterations
    plateau_guard: int = 30
    seed_center: Optional[np.ndarray] = None
    init: Optional[np.ndarray] = None
    enforce_resolution: bool = True
    quartic_guard: float = 100.0   # mid-flow collapse heuristic


@dataclass(frozen=True, eq=False)
class GroundState2D:
    field: Field2D
    a: float
    energy: float
    mu: float
    x_max: np.ndarray
    scale: ScaleParameters
    lam: float
    iters: int
    el_residual: float
    converged: bool
    tau_final: float


def seed_bubble(spec: PotentialSpec, analysis: PotentialAnalysis,
                townes: TownesProfile, a: float, grid: CartesianGrid2D,
                center: Optional[np.ndarray] = None) -> np.ndarray:
    """Rescaled ground-profile bubble, the default initial field."""
    eps = (townes.a_star - a) ** (1.0 / (2.0 + spec.p))
    X, Y = grid.meshes()
    if center is None:
        center = np.zeros(2)
    r = np.hypot(X - center[0], Y - center[1])
    return (analysis.lam / math.sqrt(townes.a_star)) / eps \
        * townes.w_at(analysis.lam * r / eps)


def locate_maximum(grid: CartesianGrid2D, u: np.ndarray) -> np.ndarray:
    """Sub-cell maximum: quadratic fit on the 3x3 stencil at the argmax.

    The fit is applied to log u (positive near the peak), which removes most
    of the bias a raw quadratic inherits from the exponential profile shape.
    Ties in the discrete argmax resolve to the smallest lexicographic index.
    """
    i, j = np.unravel_index(int(np.argmax(u)), u.shape)
    i = min(max(i, 1), grid.m - 2)
    j = min(max(j, 1), grid.m - 2)
    z = u[i - 1:i + 2, j - 1:j + 2]
    z = np.log(z) if np.all(z > 0) else z
    gx = (z[2, 1] - z[0, 1]) / 2.0
    gy = (z[1, 2] - z[1, 0]) / 2.0
    hxx = z[2, 1] - 2 * z[1, 1] + z[0, 1]
    hyy = z[1, 2] - 2 * z[1, 1] + z[1, 0]
    hxy = (z[2, 2] - z[2, 0] - z[0, 2] + z[0, 0]) / 4.0
    hess = np.array([[hxx, hxy], [hxy, hyy]])
    try:
        d = np.linalg.solve(hess, -np.array([gx, gy]))
    except np.linalg.LinAlgError:
        d = np.zeros(2)
    d = np.clip(d, -1.0, 1.0)
    return np.array([grid.interior[i] + d[0] * grid.step,
                     grid.interior[j] + d[1] * grid.step])


def minimize(spec: PotentialSpec, analysis: PotentialAnalysis,
             townes: TownesProfile, a: float, grid: CartesianGrid2D,
             opts: Optional[FlowOptions] = None) -> GroundState2D:
    """Normalized gradient flow to the constrained minimizer at strength a."""
    opts = opts or FlowOptions()
    a_star = townes.a_star
    if a < 0:
        raise ValueError("interaction strength must be nonnegative")
    if a >= a_star * (1.0 - COLLAPSE_MARGIN):
        raise Collapse(f"a = {a!r} is within the collapse margin of a* = {a_star!r}")
    p = spec.p
    scale = ScaleParameters.make(a, a_star, p)
    eps = scale.eps
    lam = analysis.lam
    width_cells = eps / (lam * grid.step)
    if opts.enforce_resolution and width_cells < MIN_CELLS_PER_WIDTH:
        raise GridTooCoarse(
            f"spike width eps/lambda spans {width_cells:.1f} cells < "
            f"{MIN_CELLS_PER_WIDTH}; refine the grid or back away from a*")

    lap = DiscreteLaplacian(grid)
    X, Y = grid.meshes()
    V = spec.v_at(X, Y)
    if np.any(V < 0):
        raise ValueError("trap is negative on the grid (envelope polynomial "
                         "invalid at this domain size)")
    dx2 = grid.step**2

    u = opts.init if opts.init is not None else seed_bubble(
        spec, analysis, townes, a, grid, opts.seed_center)
    u = np.array(u, dtype=float)
    u /= math.sqrt(np.sum(u * u) * dx2)

    def observables(u, lapu):
        q4 = float(np.sum(u**4)) * dx2
        kin = float(np.sum(-u * lapu)) * dx2
        pot = float(np.sum(V * u * u)) * dx2
        e = kin + pot - a / 2.0 * q4
        return e, e - a / 2.0 * q4, q4

    lapu = lap.apply(u)
    e_prev, mu, q4 = observables(u, lapu)
    q4_guard = opts.quartic_guard * max(q4, 1.0)
    tau = opts.tau0
    it = accepted = 0
    res = math.inf
    res_hist: list[float] = []
    converged = False
    while it < opts.max_iter:
        it += 1
        rhs = (1.0 + tau * mu) * u - tau * (V * u - a * u**3)
        un = lap.solve_shifted(rhs, 1.0 / tau) / tau
        nrm = math.sqrt(np.sum(un * un) * dx2)
        if not math.isfinite(nrm) or nrm == 0.0:
            raise NoConvergence("flow produced a non-finite iterate")
        un /= nrm
        lapun = lap.apply(un)
        en, mun, q4n = observables(un, lapun)
        if q4n > q4_guard:
            raise Collapse("quartic term grew beyond the concentration guard")
        if en > e_prev + 1e-11 * max(abs(e_prev), 1.0) and tau > opts.tau_floor * 1.01:
            tau = max(tau / 2.0, opts.tau_floor)
            accepted = 0
            continue
        u, lapu, e_prev, mu, q4 = un, lapun, en, mun, q4n
        accepted += 1
        if accepted % opts.grow_every == 0:
            cap = 1.5 / float((V + 3.0 * a * u * u - mu).max())
            tau = min(tau * opts.grow_factor, max(cap, opts.tau_floor), opts.tau0)
        if it % opts.check_every == 0:
            Hu = -lapu + V * u - a * u**3
            res = float(np.abs(Hu - mu * u).max()) / (abs(mu) * float(u.max()) + 1e-300)
            res_hist.append(res)
            if res < opts.el_tol:
                converged = True
                break
            if (len(res_hist) > opts.plateau_window
                    and res > 0.9999 * min(res_hist[:-opts.plateau_guard])):
                break

    Hu = -lapu + V * u - a * u**3
    res = float(np.abs(Hu - mu * u).max()) / (abs(mu) * float(u.max()) + 1e-300)
    return GroundState2D(
        field=Field2D(grid=grid, values=u), a=a, energy=e_prev, mu=mu,
        x_max=locate_maximum(grid, u), scale=scale, lam=lam, iters=it,
        el_residual=res, converged=converged or res < opts.el_tol,
        tau_final=tau)


def extract_mu(state: GroundState2D, spec: PotentialSpec,
               check_tol: float = 1e-8) -> float:
    """mu = e - (a/2) int u^4, cross-checked against the Rayleigh quotient."""
    g = state.field.grid
    u = state.field.values
    q4 = g.integrate(u**4)
    mu_formula = state.energy - state.a / 2.0 * q4
    lap = DiscreteLaplacian(g)
    X, Y = g.meshes()
    V = spec.v_at(X, Y)
    mu_rayleigh = g.inner(-lap.apply(u) + V * u - state.a * u**3, u)
    if abs(mu_formula - mu_rayleigh) > check_tol * max(1.0, abs(mu_formula)):
        raise NoConvergence(
            f"multiplier cross-check failed: {mu_formula!r} vs {mu_rayleigh!r}")
    return mu_formula


# -- local momentum/virial identities -----------------------------------------


@dataclass(frozen=True)
class PohozaevReport:
    grad_mismatch: np.ndarray   # j = 1, 2 translation identities
    virial_mismatch: float
    scale: float                # magnitude of the largest contributing term


def _bilinear(grid: CartesianGrid2D, f: np.ndarray, px: np.ndarray,
              py: np.ndarray) -> np.ndarray:
    x0 = grid.interior[0]
    fx = (px - x0) / grid.step
    fy = (py - x0) / grid.step
    ix = np.clip(fx.astype(int), 0, grid.m - 2)
    iy = np.clip(fy.astype(int), 0, grid.m - 2)
    tx = fx - ix
    ty = fy - iy
    return ((1 - tx) * (1 - ty) * f[ix, iy] + tx * (1 - ty) * f[ix + 1, iy]
            + (1 - tx) * ty * f[ix, iy + 1] + tx * ty * f[ix + 1, iy + 1])


def pohozaev_residual(state: GroundState2D, spec: PotentialSpec,
                      delta: float, n_angle: int = 1024) -> PohozaevReport:
    """Quadrature mismatch of the local translation and dilation identities.

    Both identities hold exactly for solutions of the Euler-Lagrange equation
    on any ball; the returned numbers are pure discretization residuals and
    must shrink under grid refinement.
    """
    g = state.field.grid
    xc = state.x_max
    if np.abs(xc).max() + delta > g.half_width - 2 * g.step:
        raise BallOutsideGrid(f"ball of radius {delta} at {xc} leaves the grid")
    eps = state.scale.eps
    lam = state.lam
    a_star = state.scale.a_star
    amp = math.sqrt(a_star) * eps / lam
    ub = amp * state.field.values
    eps2 = eps**2
    X, Y = g.meshes()
    V = spec.v_at(X, Y)
    mu_b = state.mu

    dx = g.step
    ux = np.zeros_like(ub)
    uy = np.zeros_like(ub)
    ux[1:-1, :] = (ub[2:, :] - ub[:-2, :]) / (2 * dx)
    uy[:, 1:-1] = (ub[:, 2:] - ub[:, :-2]) / (2 * dx)

    theta = (np.arange(n_angle) + 0.5) * (2 * math.pi / n_angle)
    nu = np.stack([np.cos(theta), np.sin(theta)])
    px = xc[0] + delta * nu[0]
    py = xc[1] + delta * nu[1]
    ds = 2 * math.pi * delta / n_angle

    ub_c = _bilinear(g, ub, px, py)
    ux_c = _bilinear(g, ux, px, py)
    uy_c = _bilinear(g, uy, px, py)
    V_c = spec.v_at(px, py)
    un_c = ux_c * nu[0] + uy_c * nu[1]
    grad2_c = ux_c**2 + uy_c**2
    coef4 = lam**2 * state.a / a_star

    inside = (X - xc[0]) ** 2 + (Y - xc[1]) ** 2 <= delta**2
    Vx, Vy = spec.grad_v_at(X, Y)

    mism = np.empty(2)
    scale = 0.0
    for j, (du_c, nuj, dV) in enumerate(((ux_c, nu[0], Vx), (uy_c, nu[1], Vy))):
        lhs = eps2 * float(np.sum(dV[inside] * ub[inside] ** 2)) * dx**2
        t1 = -2 * eps2 * float(np.sum(du_c * un_c)) * ds
        t2 = eps2 * float(np.sum(grad2_c * nuj)) * ds
        t3 = eps2 * float(np.sum(V_c * ub_c**2 * nuj)) * ds
        t4 = -mu_b * eps2 * float(np.sum(ub_c**2 * nuj)) * ds
        t5 = -coef4 / 2.0 * float(np.sum(ub_c**4 * nuj)) * ds
        rhs = t1 + t2 + t3 + t4 + t5
        mism[j] = lhs - rhs
        scale = max(scale, abs(lhs), abs(t1), abs(t2), abs(t3), abs(t4), abs(t5))

    # dilation multiplier (x - xc).grad u over the same ball
    rx = px - xc[0]
    ry = py - xc[1]
    xg_c = rx * ux_c + ry * uy_c
    lhs_v = -eps2 * float(np.sum(un_c * xg_c)) * ds \
        + eps2 / 2.0 * delta * float(np.sum(grad2_c)) * ds
    RX = X - xc[0]
    RY = Y - xc[1]
    xdV = RX * Vx + RY * Vy
    rhs_v = (-eps2 / 2.0 * float(np.sum(
        (ub[inside] ** 2) * (2.0 * (mu_b - V[inside]) - xdV[inside]))) * dx**2
        + eps2 / 2.0 * delta * float(np.sum(ub_c**2 * (mu_b - V_c))) * ds
        - coef4 / 2.0 * float(np.sum(ub[inside] ** 4)) * dx**2
        + coef4 / 4.0 * delta * float(np.sum(ub_c**4)) * ds)
    return PohozaevReport(grad_mismatch=mism, virial_mismatch=lhs_v - rhs_v,
                          scale=scale)


def uniqueness_probe(spec: PotentialSpec, analysis: PotentialAnalysis,
                     townes: TownesProfile, a: float, grid: CartesianGrid2D,
                     n_starts: int, rng: np.random.Generator,
                     opts: Optional[FlowOptions] = None) -> float:
    """Max pairwise L-inf distance between flows from randomized bumps.

    Every start is a positive normalized Gaussian seeded at a random center
    inside the trap core with a randomized width around the expected spike
    width; the spread of the converged states is the empirical uniqueness
    figure.
    """
    if n_starts < 5:
        raise ValueError("need at least 5 randomized starts")
    if a < 0.9 * townes.a_star:
        raise ValueError("uniqueness probe is defined in the near-critical window")
    opts = opts or FlowOptions()
    eps = (townes.a_star - a) ** (1.0 / (2.0 + spec.p))
    width0 = eps / analysis.lam
    core = min(0.3 * grid.half_width, 3.0 * width0)
    X, Y = grid.meshes()
    fields = []
    for _ in range(n_starts):
        ang = rng.uniform(0.0, 2 * math.pi)
        rad = core * math.sqrt(rng.uniform(0.0, 1.0))
        cx, cy = rad * math.cos(ang), rad * math.sin(ang)
        sig = width0 * rng.uniform(0.5, 1.5)
        bump = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * sig**2))
        o = FlowOptions(**{**opts.__dict__, "init": bump})
        state = minimize(spec, analysis, townes, a, grid, o)
        fields.append(state.field.values)
    worst = 0.0
    for i in range(n_starts):
        for j in range(i + 1, n_starts):
            worst = max(worst, float(np.abs(fields[i] - fields[j]).max()))
    return worst
