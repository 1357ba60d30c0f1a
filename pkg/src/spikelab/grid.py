"""Square 2D grids, fields, and the discrete operators shared by the
linearized solves and the ground-state flow.

The Laplacian is the fourth-order cross stencil with zero extension past the
Dirichlet ring.  Every field handled here decays exponentially, so the zero
extension costs O(boundary value).  The stencil is a symmetric banded Toeplitz
operator in each direction and is therefore diagonalized exactly by the type-I
discrete sine transform, which gives a direct solver for (c - Delta_h) and an
exact preconditioner for the linearized operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft


@dataclass(frozen=True, eq=False)
class CartesianGrid2D:
    """Uniform square lattice of (2N+1)^2 nodes centered at the origin.

    The outermost ring is the Dirichlet boundary; interior fields live on the
    (2N-1)^2 inner nodes.  The origin is always a lattice node.
    """

    half_width: float
    step: float
    nodes: np.ndarray = field(init=False, repr=False)       # full 1D axis
    interior: np.ndarray = field(init=False, repr=False)    # interior 1D axis

    def __post_init__(self):
        n = int(round(2 * self.half_width / self.step))
        if n < 8 or n % 2 != 0:
            raise ValueError("grid must have an even interval count >= 8")
        if abs(n * self.step - 2 * self.half_width) > 1e-12 * self.half_width:
            raise ValueError("half_width must be an integer multiple of step")
        object.__setattr__(self, "nodes", np.linspace(-self.half_width, self.half_width, n + 1))
        object.__setattr__(self, "interior", self.nodes[1:-1])

    @property
    def m(self) -> int:
        """Interior node count per side."""
        return self.interior.size

    def meshes(self):
        X, Y = np.meshgrid(self.interior, self.interior, indexing="ij")
        return X, Y

    def radii(self) -> np.ndarray:
        X, Y = self.meshes()
        return np.hypot(X, Y)

    def origin_index(self) -> int:
        return self.m // 2

    def integrate(self, values: np.ndarray) -> float:
        """Plane integral of an interior field (plain cell sum).

        For smooth fields that decay below rounding at the boundary this rule
        is superconvergent; it is also the exact discrete pairing used in the
        solvability conditions.
        """
        return float(np.sum(values)) * self.step**2

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.sum(f * g)) * self.step**2

    def norm2(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.sum(f * f))) * self.step


@dataclass(frozen=True, eq=False)
class Field2D:
    """Real scalar field on the interior nodes of a CartesianGrid2D."""

    grid: CartesianGrid2D
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.m, self.grid.m):
            raise ValueError("field shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def boundary_max(self) -> float:
        v = self.values
        return float(max(np.abs(v[0, :]).max(), np.abs(v[-1, :]).max(),
                         np.abs(v[:, 0]).max(), np.abs(v[:, -1]).max()))

    def integrate(self) -> float:
        return self.grid.integrate(self.values)


class DiscreteLaplacian:
    """Fourth-order 2D Laplacian with zero extension, plus its DST solver."""

    def __init__(self, grid: CartesianGrid2D):
        self.grid = grid
        m, dx = grid.m, grid.step
        a = np.arange(1, m + 1) * np.pi / (m + 1)
        lam1 = (30.0 - 32.0 * np.cos(a) + 2.0 * np.cos(2 * a)) / (12.0 * dx * dx)
        self.eigs = lam1[:, None] + lam1[None, :]   # eigenvalues of -Delta_h
        self._scale = (2.0 * (m + 1)) ** 2

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Delta_h f (note the sign: this is the Laplacian, not its negative).

        Ghost values one step past the boundary ring are odd reflections of
        the first interior ring, which makes this stencil exactly the operator
        the sine-transform solver inverts (a zero ghost would differ from it
        by f(1)/(12 dx^2) on the outermost interior ring).
        """
        dx2 = 12.0 * self.grid.step**2
        g = np.zeros((f.shape[0] + 4, f.shape[1] + 4))
        g[2:-2, 2:-2] = f
        g[0, 2:-2] = -f[0, :]
        g[-1, 2:-2] = -f[-1, :]
        g[2:-2, 0] = -f[:, 0]
        g[2:-2, -1] = -f[:, -1]
        return (-g[:-4, 2:-2] + 16 * g[1:-3, 2:-2] - 30 * g[2:-2, 2:-2]
                + 16 * g[3:-1, 2:-2] - g[4:, 2:-2]
                - g[2:-2, :-4] + 16 * g[2:-2, 1:-3] - 30 * g[2:-2, 2:-2]
                + 16 * g[2:-2, 3:-1] - g[2:-2, 4:]) / dx2

    def dst2(self, f: np.ndarray) -> np.ndarray:
        return sfft.dstn(f, type=1)

    def idst2(self, F: np.ndarray) -> np.ndarray:
        return sfft.dstn(F, type=1) / self._scale

    def solve_shifted(self, rhs: np.ndarray, shift: float) -> np.ndarray:
        """Solve (shift - Delta_h) u = rhs exactly via the sine transform."""
        return self.idst2(self.dst2(rhs) / (shift + self.eigs))


def gradient(grid: CartesianGrid2D, f: np.ndarray):
    """Fourth-order central gradient with zero extension."""
    dx = grid.step
    g = np.zeros((f.shape[0] + 4, f.shape[1] + 4))
    g[2:-2, 2:-2] = f
    fx = (g[:-4, 2:-2] - 8 * g[1:-3, 2:-2] + 8 * g[3:-1, 2:-2] - g[4:, 2:-2]) / (12 * dx)
    fy = (g[2:-2, :-4] - 8 * g[2:-2, 1:-3] + 8 * g[2:-2, 3:-1] - g[2:-2, 4:]) / (12 * dx)
    return fx, fy


def gradient_at_origin(grid: CartesianGrid2D, f: np.ndarray) -> np.ndarray:
    """Fourth-order central gradient evaluated at the origin node."""
    i = grid.origin_index()
    dx = grid.step
    gx = (f[i - 2, i] - 8 * f[i - 1, i] + 8 * f[i + 1, i] - f[i + 2, i]) / (12 * dx)
    gy = (f[i, i - 2] - 8 * f[i, i - 1] + 8 * f[i, i + 1] - f[i, i + 2]) / (12 * dx)
    return np.array([gx, gy])
