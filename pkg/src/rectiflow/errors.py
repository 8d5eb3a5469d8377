"""Exception hierarchy shared by every rectiflow module."""

from __future__ import annotations


class RectiflowError(Exception):
    """Base class for all library errors."""


class InvalidDistributionError(RectiflowError, ValueError):
    """A distribution violates its invariants (weights, PSD covariance, ...)."""


class InvalidMatrixError(RectiflowError, ValueError):
    """A matrix is asymmetric or indefinite where PSD input was required."""


class InvalidArgumentError(RectiflowError, ValueError):
    """An argument is structurally invalid (singular map, wrong shape, ...)."""


class DomainError(RectiflowError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class SingularTimeError(RectiflowError):
    """A velocity field was evaluated at one of its singular times."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class SingularCovarianceError(RectiflowError):
    """The interpolant covariance is numerically singular."""

    def __init__(self, message: str, t: float | None = None, cond: float | None = None):
        super().__init__(message)
        self.t = t
        self.cond = cond


class OutOfSupportError(RectiflowError):
    """A piecewise field was queried outside its declared support tubes."""


class EvaluationError(RectiflowError):
    """A velocity evaluation failed (underflow of all mixture weights, ...).

    Attributes:
        t: Time of the failing evaluation, when known.
        x: State of the failing evaluation, when known.
        index: Row index of the failing point, when known.
    """

    def __init__(self, message: str, t=None, x=None, index=None):
        super().__init__(message)
        self.t = t
        self.x = x
        self.index = index


class DivergenceError(RectiflowError):
    """An integrator produced non-finite states."""

    def __init__(self, message: str, t=None):
        super().__init__(message)
        self.t = t


class NonRectifiableError(RectiflowError):
    """ODE trajectories collapsed at an interior time.

    Attributes:
        t_star: Time at which the collapse was detected.
        min_spread: Spread of the state cloud at ``t_star``.
        report: Partial iteration report, filled in by the iteration driver.
    """

    def __init__(self, message: str, t_star: float | None = None,
                 min_spread: float | None = None):
        super().__init__(message)
        self.t_star = t_star
        self.min_spread = min_spread
        self.report = None
        self.step = None


class ResourceError(RectiflowError):
    """A problem exceeds a configured size guard."""


class ConfigError(RectiflowError, ValueError):
    """An experiment configuration or scenario spec is invalid."""
