"""Exception types raised across the package."""


class SpdeLabError(Exception):
    """Base class for all package errors."""


class DomainError(SpdeLabError, ValueError):
    """An argument lies outside the domain of a function or model."""


class GridMismatchError(SpdeLabError, ValueError):
    """Two objects that must share a lattice do not."""


class AdmissibilityError(SpdeLabError):
    """A correlation model fails an integrability condition required downstream."""


class ConsistencyError(SpdeLabError):
    """Two independent computations of the same quantity disagree."""


class QuadratureError(SpdeLabError):
    """Adaptive quadrature did not reach the requested accuracy."""


class StabilityError(SpdeLabError):
    """A time-stepping configuration violates its stability certificate."""


class ConvergenceError(SpdeLabError):
    """An iteration did not converge within its budget.

    Attributes
    ----------
    history : list of float
        Increment norms recorded before giving up.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class HypothesisError(SpdeLabError):
    """An experiment's mathematical preconditions are not met."""


class ConfigError(SpdeLabError, ValueError):
    """An experiment configuration is malformed or references invalid values."""
