"""Exception types shared across the package."""


class CenraError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CenraError, ValueError):
    """Invalid layout, hyperparameter or checkpoint/shape mismatch."""


class UsageError(CenraError, RuntimeError):
    """An operation was called in a state or with shapes it does not accept."""


class NumericError(CenraError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (index {index})")
        self.index = index


class NotReady(CenraError):
    """Not enough data yet; the caller is expected to skip this update."""


class OracleError(CenraError, ValueError):
    """The shortest-path oracle was asked about a cell it cannot reach."""
