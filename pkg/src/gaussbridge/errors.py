"""Exception hierarchy.

Everything raised on purpose derives from :class:`GsbError` so callers (and the
CLI) can tell a domain failure from a genuine bug. ``InvalidParams`` and its
subclasses map to exit code 2, other ``GsbError`` subclasses to exit code 3,
and I/O trouble to exit code 4.
"""

from __future__ import annotations

__all__ = [
    "GsbError",
    "InvalidParams",
    "ConfigError",
    "DimensionMismatch",
    "DimensionTooLarge",
    "NotPsd",
    "SingularCovariance",
    "SingularMarginal",
    "TimeOutOfRange",
    "QuadratureFailure",
    "DegenerateHorizon",
    "DivergedSimulation",
    "NonFiniteLoss",
    "TooFewPoints",
    "OutputLocked",
]


class GsbError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParams(GsbError):
    """A parameter value is outside its documented domain."""


class ConfigError(InvalidParams):
    """A run configuration file or override failed validation."""


class DimensionMismatch(GsbError):
    """Inputs that must share a dimension do not."""


class DimensionTooLarge(GsbError):
    """Requested dimension exceeds the supported desk-scale limit."""


class NotPsd(GsbError):
    """A matrix required to be positive semi-definite is not, beyond tolerance."""


class SingularCovariance(GsbError):
    """A covariance that must be invertible is numerically singular."""


class SingularMarginal(SingularCovariance):
    """The interpolating marginal covariance is numerically singular."""


class TimeOutOfRange(GsbError):
    """A time argument lies outside the valid interval."""


class QuadratureFailure(GsbError):
    """Adaptive quadrature could not reach the requested tolerance."""


class DegenerateHorizon(GsbError):
    """The reference process accumulates (numerically) no noise by the horizon."""


class DivergedSimulation(GsbError):
    """A simulated trajectory produced non-finite state."""


class NonFiniteLoss(GsbError):
    """A training loss or gradient became non-finite."""


class TooFewPoints(GsbError):
    """Not enough samples for the requested estimate."""


class OutputLocked(GsbError):
    """Another run holds the lock on the requested output directory."""
