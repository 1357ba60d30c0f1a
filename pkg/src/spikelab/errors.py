"""Exception types shared across the package."""


class SpikelabError(Exception):
    """Base class for all package errors."""


class NoBracket(SpikelabError):
    """Initial shooting bracket fails to separate overshoot from undershoot."""


class TailNotDecayed(SpikelabError):
    """Profile has not decayed below tail_tol at the grid radius."""


class ZeroField(SpikelabError):
    """Field is identically zero where a nonzero field is required."""


class NoConvergence(SpikelabError):
    """Iteration failed to reach its tolerance within the iteration budget."""


class Degenerate(SpikelabError):
    """Hessian determinant test failed at the critical point."""


class NotSolvable(SpikelabError):
    """Right-hand side is not orthogonal to the kernel of the linearized operator."""


class SingularSystem(SpikelabError):
    """A 2x2 solvability system is numerically singular."""


class WrongCase(SpikelabError):
    """Requested prediction does not apply to the active expansion branch."""


class Collapse(SpikelabError):
    """Interaction strength at or beyond the collapse threshold."""


class GridTooCoarse(SpikelabError):
    """Grid cannot resolve the expected spike width."""


class BallOutsideGrid(SpikelabError):
    """Requested ball is not contained in the computational domain."""


class InsufficientPoints(SpikelabError):
    """Too few sweep points for the requested fit."""


class ConfigError(SpikelabError):
    """Malformed or inconsistent run configuration."""
