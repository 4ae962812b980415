"""Exception types shared across the package.

The CLI maps these onto exit codes: input/validation problems exit with 2,
solver failures with 3.
"""

from __future__ import annotations


class SdotError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(SdotError):
    """Malformed or inconsistent input data."""


class ParseError(ValidationError):
    """A mesh or point file could not be parsed."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class GeometryError(SdotError):
    """A geometric primitive received degenerate input."""


class SolverError(SdotError):
    """Base class for failures of the transport solver and its callers."""


class DegenerateConfigurationError(SolverError):
    """The weighted diagram sits on a non-differentiable configuration.

    Carries the offending site pairs (0-indexed, each sorted) and, when known,
    the index of a triangle witnessing the problem.
    """

    def __init__(self, pairs, triangle: int = -1, message: str = ""):
        self.pairs = sorted(tuple(sorted(p)) for p in pairs)
        self.triangle = triangle
        detail = message or (
            "degenerate site configuration at pairs "
            f"{self.pairs}" + (f" (triangle {triangle})" if triangle >= 0 else "")
        )
        super().__init__(detail)


class InitializationError(SolverError):
    """Starting weights could not be made to give every cell positive mass."""

    def __init__(self, sites, message: str = ""):
        self.sites = list(sites)
        super().__init__(
            message or f"cells of sites {self.sites} stayed empty after perturbation"
        )


class SingularSystemError(SolverError):
    """The Newton linear system could not be solved to tolerance."""


class LineSearchError(SolverError):
    """Step halving exhausted its exponent budget without an acceptable step."""


class NonConvergenceError(SolverError):
    """The iteration cap was reached before the residual target."""


class RegistrationError(SolverError):
    """Rigid alignment failed (degenerate correspondence geometry)."""
