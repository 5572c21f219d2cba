"""Exception types raised across the package."""

from __future__ import annotations


class QdClusterError(Exception):
    """Base class for all package errors."""


class DimensionError(QdClusterError, ValueError):
    """Operand shapes or Hilbert-space dimensions do not match."""


class UnknownSubsystemError(QdClusterError, KeyError):
    """A subsystem label is not part of the Hilbert space."""


class ParameterError(QdClusterError, ValueError):
    """A physical or numerical parameter is outside its valid range."""


class ConfigError(QdClusterError, ValueError):
    """A scenario configuration failed validation.

    ``field`` carries the dotted path of the offending entry so the CLI can
    print machine-parsable diagnostics.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class FitError(QdClusterError, RuntimeError):
    """Nonlinear least squares did not converge.

    The last iterate and its residual norm are kept for inspection.
    """

    def __init__(self, message: str, last_params, residual_rms: float):
        super().__init__(f"{message} (last={list(last_params)}, rms={residual_rms:.3g})")
        self.last_params = last_params
        self.residual_rms = residual_rms
