"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class FbsdeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(FbsdeError, ValueError):
    """Invalid grid, sizes, seeds or experiment configuration."""


class DomainError(FbsdeError, ValueError):
    """A value lies outside its admissible range (e.g. phi outside [0, 1])."""


class UnsupportedGridError(FbsdeError, ValueError):
    """The operation needs a dyadic grid."""


class DimensionError(FbsdeError, ValueError):
    """Array shapes or truncation levels do not match."""


class ContractError(FbsdeError, TypeError):
    """A path functional was used with the wrong arity or adaptedness tag."""


class UnsupportedExponentError(FbsdeError, ValueError):
    """Moment exponent outside the supported range."""


class SolvabilityError(FbsdeError):
    """The small-interval solvability condition fails."""


class IterationDivergenceError(FbsdeError):
    """Picard iteration did not converge; ``residuals`` holds the history."""

    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = list(residuals)


class IllConditionedBasisError(FbsdeError):
    """The regression design matrix is rank deficient."""


class StructuralError(FbsdeError):
    """The coefficient pack lacks the sigma + A split or violates linearity."""


class RegularityLossError(FbsdeError):
    """The fitted decoupling field became too steep for the diffusion's z-dependence."""


class DiagnosticError(FbsdeError):
    """Sample moments needed by a diagnostic are not finite."""
