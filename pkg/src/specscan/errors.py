"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration and validation problems
exit with 2, numerical failures with 3, and I/O failures with 4.
"""


class SpecscanError(Exception):
    """Base class for all package errors."""


class ContractError(SpecscanError):
    """An argument violates an interface contract (shape, length, pairing)."""


class DomainError(SpecscanError):
    """A value is outside the mathematical domain of an operation."""


class GridRangeError(SpecscanError):
    """A wavelength query falls outside the supported grid range."""


class ValidationError(SpecscanError):
    """A data structure violates its declared invariants."""


class ConfigError(SpecscanError):
    """A configuration value or combination is invalid."""


class FitRejectedError(SpecscanError):
    """A model fit was rejected (degenerate or low-SNR input).

    Carries the last residual so callers can log or triage.
    """

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class NumericalError(SpecscanError):
    """An iterative computation produced non-finite values or failed to converge."""

    def __init__(self, message: str, iteration: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.residual = residual
