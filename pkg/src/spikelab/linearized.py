"""The linearized operator L = -Delta + (1 - 3 w^2) and the correction fields.

L is assembled on a square grid whose half-width matches the radial truncation
of the profile.  Its kernel is spanned by the translation modes dw/dx_j, so
L psi = f is solvable only when f is orthogonal to them; the solve pins the
discrete-kernel components with two Lagrange-multiplier rows (keeping the
bordered system nonsingular), and the result is then shifted by a kernel
combination so that grad psi(0) = 0, which is the normalization every
correction field carries.

The bordered symmetric system is solved by MINRES preconditioned with the
exact inverse of (1 - Delta_h) applied through sine transforms.  Plain CG is
not used: the operator has a negative eigenvalue and the bordered matrix is
indefinite by construction, which is precisely the breakdown case for CG.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse.linalg import LinearOperator, minres

from .errors import NoConvergence, NotSolvable, SingularSystem
from .grid import (CartesianGrid2D, DiscreteLaplacian, Field2D, gradient,
                   gradient_at_origin)
from .potential import PotentialAnalysis, PotentialSpec
from .radial import TownesProfile

#: contract tolerance for operator identities, relative to the field scale
LIN_TOL = 1e-3

#: admissible kernel component of a right-hand side, relative to |f| |dw|
ORTH_TOL = 1e-4


def matched_grid(townes: TownesProfile, step: float) -> CartesianGrid2D:
    """Square grid whose half-width equals the profile truncation radius."""
    return CartesianGrid2D(half_width=townes.grid.radius, step=step)


class LinearizedOperator:
    """Discrete L = -Delta_h + (1 - 3 w^2) with kernel-aware solve."""

    def __init__(self, townes: TownesProfile, grid: CartesianGrid2D):
        if grid.step > 0.1:
            raise ValueError("grid too coarse to resolve the profile (need dx <= 0.1)")
        if abs(grid.half_width - townes.grid.radius) > grid.step:
            raise ValueError("grid half-width must match the profile radius")
        self.townes = townes
        self.grid = grid
        self.lap = DiscreteLaplacian(grid)
        r = grid.radii()
        X, Y = grid.meshes()
        self.w = townes.w_at(r)
        self.diag = 1.0 - 3.0 * self.w**2
        ratio = townes.dw_over_r(r)
        #: analytic translation modes (used for the grad-at-0 shift)
        self.d1 = ratio * X
        self.d2 = ratio * Y
        #: discrete derivative fields (used for the Lagrange pinning)
        self.b1, self.b2 = gradient(grid, self.w)
        self._shift_mat = np.column_stack([gradient_at_origin(grid, self.d1),
                                           gradient_at_origin(grid, self.d2)])

    def apply(self, f: np.ndarray) -> np.ndarray:
        return -self.lap.apply(f) + self.diag * f

    def kernel_residuals(self) -> tuple[float, float, float]:
        """Max-norms of L d1w, L(w + x.grad w) + 2w, and L w + 2w^3."""
        r1 = float(np.abs(self.apply(self.d1)).max())
        xg = self.grid.radii() * self.townes.dw_at(self.grid.radii())
        r2 = float(np.abs(self.apply(self.w + xg) + 2 * self.w).max())
        r3 = float(np.abs(self.apply(self.w) + 2 * self.w**3).max())
        return r1, r2, r3

    # -- solve ----------------------------------------------------------

    def solve_mod_kernel(self, f: np.ndarray, rtol: float = 1e-11,
                         orth_tol: float = ORTH_TOL,
                         maxiter: int = 4000) -> tuple[np.ndarray, dict]:
        """Solve L psi = f, psi normalized by grad psi(0) = 0.

        Raises NotSolvable when f has a kernel component above orth_tol
        (signals a wrong critical point or a malformed forcing).
        """
        g = self.grid
        fn = g.norm2(f)
        if fn == 0.0:
            return np.zeros_like(f), {"residual": 0.0, "shift": np.zeros(2),
                                      "iterations": 0}
        for j, b in enumerate((self.b1, self.b2)):
            proj = abs(g.inner(f, b))
            if proj > orth_tol * fn * g.norm2(b):
                raise NotSolvable(
                    f"<f, d{j+1}w> = {proj:.3e} exceeds solvability tolerance "
                    f"{orth_tol:.1e} * |f| * |dw|")
        m = g.m
        n = m * m
        B0, B1 = self.b1, self.b2

        def mv(z):
            u = z[:n].reshape(m, m)
            c = z[n:]
            out = self.apply(u) + c[0] * B0 + c[1] * B1
            return np.concatenate([out.ravel(),
                                   [np.sum(B0 * u), np.sum(B1 * u)]])

        den = self.lap.eigs + 1.0
        s = float(np.sum(B0 * self.lap.idst2(self.lap.dst2(B0) / den)))

        def pre(z):
            u = z[:n].reshape(m, m)
            out = self.lap.idst2(self.lap.dst2(u) / den)
            return np.concatenate([out.ravel(), z[n:] / s])

        K = LinearOperator((n + 2, n + 2), matvec=mv)
        M = LinearOperator((n + 2, n + 2), matvec=pre)
        rhs = np.concatenate([f.ravel(), [0.0, 0.0]])
        z, info = minres(K, rhs, M=M, rtol=rtol, maxiter=maxiter)
        res = float(np.linalg.norm(mv(z) - rhs) / np.linalg.norm(rhs))
        # minres stops on the preconditioned norm; accept any true relative
        # residual far below the 1e-3 operator contract
        if info != 0 or res > 1e-6:
            raise NoConvergence(f"minres info={info}, relative residual {res:.2e}")
        psi = z[:n].reshape(m, m)
        c = np.linalg.solve(self._shift_mat, -gradient_at_origin(g, psi))
        psi = psi + c[0] * self.d1 + c[1] * self.d2
        return psi, {"residual": res, "shift": c, "iterations": info}


def solve_radial_mod_kernel(townes: TownesProfile, f_radial: np.ndarray) -> np.ndarray:
    """Solve the radial reduction of L psi = f for radial forcings.

    The radial operator has no kernel (the translation modes are not radial),
    so this is a plain tridiagonal solve; used to cross-check the radially
    symmetric correction fields from the 2D path.
    """
    g = townes.grid
    n = g.count + 1
    r = g.nodes()
    dr = g.step
    diag = np.empty(n)
    lower = np.zeros(n - 1)
    upper = np.zeros(n - 1)
    diag[0] = 4.0 / dr**2 + 1.0 - 3.0 * townes.w0**2
    upper[0] = -4.0 / dr**2
    ri = r[1:-1]
    diag[1:-1] = 2.0 / dr**2 + 1.0 - 3.0 * townes.w[1:-1] ** 2
    lower[: n - 2] = -1.0 / dr**2 + 1.0 / (2 * dr * ri)
    upper[1:] = -1.0 / dr**2 - 1.0 / (2 * dr * ri)
    diag[-1] = 1.0
    lower[-1] = 0.0
    rhs = f_radial.copy()
    rhs[-1] = 0.0
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1, :] = diag
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, rhs)


@dataclass(frozen=True, eq=False)
class CorrectionSet:
    """The correction fields of the spike expansion, all with grad(0) = 0."""

    grid: CartesianGrid2D
    psi1: Field2D
    psi2: Field2D
    psi3: Field2D
    psi4: Field2D
    psi5: Field2D
    phi: Optional[Field2D]
    y_sup: np.ndarray               # solvability vector of the psi3 forcing
    x0: np.ndarray                  # odd-envelope solvability vector
    normalization_shift: dict       # kernel coefficients applied per field
    diagnostics: dict


def _forcing_psi1(lop: LinearizedOperator, spec: PotentialSpec,
                  analysis: PotentialAnalysis, h_shift: np.ndarray) -> np.ndarray:
    t = lop.townes
    return (-2.0 * lop.w**3 / t.moments.quartic
            - 2.0 * h_shift * lop.w / (spec.p * analysis.H0))


def build_psi1(lop: LinearizedOperator, spec: PotentialSpec,
               analysis: PotentialAnalysis) -> tuple[np.ndarray, dict]:
    X, Y = lop.grid.meshes()
    h_shift = spec.h_at(X + analysis.y0[0], Y + analysis.y0[1])
    return lop.solve_mod_kernel(_forcing_psi1(lop, spec, analysis, h_shift))


def build_psi2(lop: LinearizedOperator) -> np.ndarray:
    """Closed form -(w + x.grad w)/2; satisfies L psi2 = w."""
    r = lop.grid.radii()
    return -0.5 * (lop.w + r * lop.townes.dw_at(r))


def solve_y_sup(lop: LinearizedOperator, spec: PotentialSpec,
                analysis: PotentialAnalysis, psi1: np.ndarray) -> np.ndarray:
    """Solvability vector of the psi3 equation.

    Chosen so that the forcing of psi3 is orthogonal to both translation
    modes: M y = -lambda^{1+p} * I5, where M_{ji} = int (d_j w) w d_i h(.+y0)
    and I5 collects the quadratic-in-psi1 solvability integrals.
    """
    g = lop.grid
    t = lop.townes
    X, Y = g.meshes()
    zx, zy = X + analysis.y0[0], Y + analysis.y0[1]
    h_shift = spec.h_at(zx, zy)
    hx, hy = spec.grad_h_at(zx, zy)
    lam2p = analysis.lam_base
    mat = np.empty((2, 2))
    i5 = np.empty(2)
    for j, dj in enumerate((lop.d1, lop.d2)):
        mat[j, 0] = g.inner(dj * lop.w, hx)
        mat[j, 1] = g.inner(dj * lop.w, hy)
        i5[j] = (3.0 / t.a_star * g.inner(dj, lop.w**2 * psi1)
                 + g.inner(dj, h_shift * psi1) / lam2p
                 - 3.0 * g.inner(dj, lop.w * psi1**2))
    det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
    scale = max(abs(mat).max(), 1e-30)
    if abs(det) < 1e-10 * scale**2:
        raise SingularSystem("solvability matrix for y_sup is singular "
                             "(degenerate critical point?)")
    return np.linalg.solve(mat, -analysis.lam_pow(1 + spec.p) * i5)


def build_psi345(lop: LinearizedOperator, spec: PotentialSpec,
                 analysis: PotentialAnalysis, psi1: np.ndarray,
                 psi2: np.ndarray, y_sup: np.ndarray):
    """Second-order correction fields.

    psi4's forcing is radial, so it is additionally solved on the radial grid
    and the two answers compared (stored in the diagnostics).
    """
    g = lop.grid
    t = lop.townes
    X, Y = g.meshes()
    zx, zy = X + analysis.y0[0], Y + analysis.y0[1]
    h_shift = spec.h_at(zx, zy)
    hx, hy = spec.grad_h_at(zx, zy)
    lam2p = analysis.lam_base
    coef = 3.0 * lop.w**2 / t.a_star + h_shift / lam2p

    f3 = (3.0 * lop.w * psi1**2 - coef * psi1
          - lop.w / analysis.lam_pow(1 + spec.p) * (y_sup[0] * hx + y_sup[1] * hy))
    f4 = 3.0 * lop.w * psi2**2 + psi2
    f5 = (6.0 * lop.w * psi1 * psi2 + psi1 - coef * psi2
          - lop.w / (2.0 * lam2p) * (analysis.y0[0] * hx + analysis.y0[1] * hy))

    out = {}
    shifts = {}
    for name, f in (("psi3", f3), ("psi4", f4), ("psi5", f5)):
        try:
            psi, info = lop.solve_mod_kernel(f)
        except NotSolvable as exc:
            raise NotSolvable(f"{name}: {exc}") from exc
        out[name] = psi
        shifts[name] = info["shift"]

    # radial cross-check of psi4
    r = t.grid.nodes()
    w_r = t.w
    psi2_r = -0.5 * (w_r + r * t.dw)
    psi4_r = solve_radial_mod_kernel(t, 3.0 * w_r * psi2_r**2 + psi2_r)
    rad = g.radii()
    inside = rad <= t.grid.radius
    psi4_lift = np.zeros_like(rad)
    psi4_lift[inside] = np.interp(rad[inside], r, psi4_r)
    agree = float(np.abs((out["psi4"] - psi4_lift)[inside]).max())
    return out["psi3"], out["psi4"], out["psi5"], shifts, agree


def build_phi(lop: LinearizedOperator, spec: PotentialSpec,
              analysis: PotentialAnalysis) -> tuple[np.ndarray, np.ndarray, dict]:
    """Envelope correction field and its solvability vector x0.

    Requires an even trap.  For even envelope order the forcing is already
    orthogonal to the kernel and x0 = 0; for odd order, x0 is solved from the
    2x2 system that restores orthogonality.
    """
    g = lop.grid
    t = lop.townes
    if spec.is_constant_envelope():
        return np.zeros((g.m, g.m)), np.zeros(2), {"shift": np.zeros(2)}
    if not spec.is_even():
        raise NotSolvable("envelope corrections require an even trap")
    m_ord = spec.envelope_order
    X, Y = g.meshes()
    h0 = spec.h_at(X, Y)
    taylor = spec.envelope_taylor_term(X, Y)
    lam2p = analysis.lam_base

    x0 = np.zeros(2)
    if m_ord % 2 == 1:
        hx, hy = spec.grad_h_at(X, Y)
        mat = np.empty((2, 2))
        rhs = np.empty(2)
        for j, dj in enumerate((lop.d1, lop.d2)):
            mat[j, 0] = g.inner(dj * lop.w, hx)
            mat[j, 1] = g.inner(dj * lop.w, hy)
            rhs[j] = g.inner(dj, taylor * h0 * lop.w) / analysis.lam_pow(m_ord)
        det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
        if abs(det) < 1e-10 * max(abs(mat).max(), 1e-30) ** 2:
            raise SingularSystem("x0 system is singular")
        x0 = np.linalg.solve(spec.g0 * mat, -rhs)

    forcing = -(taylor * h0 * lop.w / analysis.lam_pow(m_ord)) / lam2p
    if m_ord % 2 == 1:
        hx, hy = spec.grad_h_at(X, Y)
        forcing = forcing - spec.g0 * (x0[0] * hx + x0[1] * hy) * lop.w / lam2p
    phi, info = lop.solve_mod_kernel(forcing)
    return phi, x0, info


def build_corrections(townes: TownesProfile, spec: PotentialSpec,
                      analysis: PotentialAnalysis,
                      grid: Optional[CartesianGrid2D] = None,
                      step: float = 0.05) -> CorrectionSet:
    """Assemble the full correction set for one potential."""
    if grid is None:
        grid = matched_grid(townes, step)
    lop = LinearizedOperator(townes, grid)
    X, Y = grid.meshes()
    h_shift = spec.h_at(X + analysis.y0[0], Y + analysis.y0[1])
    psi1, info1 = lop.solve_mod_kernel(_forcing_psi1(lop, spec, analysis, h_shift))
    psi2 = build_psi2(lop)
    y_sup = solve_y_sup(lop, spec, analysis, psi1)
    psi3, psi4, psi5, shifts, psi4_agree = build_psi345(
        lop, spec, analysis, psi1, psi2, y_sup)
    phi_arr, x0, phi_info = build_phi(lop, spec, analysis)
    shifts["psi1"] = info1["shift"]
    shifts["phi"] = phi_info.get("shift", np.zeros(2))
    wrap = lambda arr: Field2D(grid=grid, values=arr)
    return CorrectionSet(
        grid=grid,
        psi1=wrap(psi1), psi2=wrap(psi2), psi3=wrap(psi3),
        psi4=wrap(psi4), psi5=wrap(psi5),
        phi=None if spec.is_constant_envelope() else wrap(phi_arr),
        y_sup=y_sup, x0=x0,
        normalization_shift=shifts,
        diagnostics={"psi4_radial_agreement": psi4_agree,
                     "operator": lop},
    )


def export_field_csv(path, name: str, field: Field2D, p: float) -> None:
    g = field.grid
    X, Y = g.meshes()
    with open(path, "w") as fh:
        fh.write(f"# field={name} p={p!r} dx={g.step!r} R={g.half_width!r}\n")
        for i in range(g.m):
            for j in range(g.m):
                fh.write(f"{X[i, j]:.17g} {Y[i, j]:.17g} {field.values[i, j]:.17g}\n")
