"""Exception types raised across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 1,
I/O problems exit 2, numerical failures exit 3.
"""


class DynsolveError(Exception):
    """Base class for all package errors."""


class ConfigError(DynsolveError, ValueError):
    """Invalid configuration or run parameters."""


class UsageError(DynsolveError, ValueError):
    """Inputs with inconsistent shapes or missing prerequisites."""


class DomainError(DynsolveError, ValueError):
    """A scalar or vector argument outside its admissible domain."""


class GraphError(DynsolveError, ValueError):
    """Malformed source graph (self edges, asymmetric or nonpositive distances)."""


class GeometryError(DynsolveError, ValueError):
    """Degenerate sensor/source geometry."""


class DataError(DynsolveError, ValueError):
    """Non-finite or otherwise unusable observations."""


class DegenerateTruthError(DynsolveError, ValueError):
    """Ground truth without both active and inactive entries."""


class StabilityError(DynsolveError, ArithmeticError):
    """A transition matrix whose spectral radius is not below one."""


class ConditioningError(DynsolveError, ArithmeticError):
    """Loss of positive (semi)definiteness or a failed factorization."""


class MonotonicityError(DynsolveError, RuntimeError):
    """EM cost decreased beyond round-off slack. Indicates a bug, not bad data."""


class SimulationError(DynsolveError, RuntimeError):
    """The simulation harness could not produce a valid data set."""
