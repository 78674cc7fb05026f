"""Error types raised across the package.

Everything inherits from PcrlbDesignError so callers (and the CLI) can
distinguish tool failures from programming errors.
"""

from __future__ import annotations


class PcrlbDesignError(Exception):
    """Base class for all errors raised by this package."""


class ModelDefinitionError(PcrlbDesignError, ValueError):
    """Model constants are inconsistent (shapes, non-PD covariances, ...)."""


class SimulationDivergenceError(PcrlbDesignError, RuntimeError):
    """A simulated state became non-finite."""

    def __init__(self, message: str, path: int | None = None, time: int | None = None):
        super().__init__(message)
        self.path = path
        self.time = time


class InformationUpdateError(PcrlbDesignError, RuntimeError):
    """An information-matrix update failed (singular solve or non-PD result)."""

    def __init__(self, message: str, time: int | None = None):
        super().__init__(message)
        self.time = time


class BoundDegeneracyError(PcrlbDesignError, RuntimeError):
    """The parameter-block Schur complement is not positive definite."""

    def __init__(self, message: str, min_eigenvalue: float | None = None, time: int | None = None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.time = time


class PolicyError(PcrlbDesignError, ValueError):
    """Invalid input-policy construction or use."""


class CapacityError(PolicyError):
    """The chain state space exceeds the supported cardinality."""


class EncodingError(PolicyError):
    """An input value does not lie on the policy's grid."""


class EstimatorDegeneracyError(PcrlbDesignError, RuntimeError):
    """Every particle weight underflowed; the filter lost track."""

    def __init__(self, message: str, time: int | None = None):
        super().__init__(message)
        self.time = time


class OracleError(PcrlbDesignError, RuntimeError):
    """An oracle was misused or failed its internal self-check."""


class ConfigError(PcrlbDesignError, ValueError):
    """A run configuration file or flag is invalid."""
