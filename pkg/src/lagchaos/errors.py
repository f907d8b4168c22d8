"""Exception types shared across the package."""


class LagchaosError(Exception):
    """Base class for all package errors."""


class DomainError(LagchaosError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(LagchaosError, ValueError):
    """A configuration violates a resolution or stability precondition."""


class BlowUpError(LagchaosError, FloatingPointError):
    """A trajectory produced non-finite coefficients.

    The ``record`` attribute holds a small diagnostic dictionary
    (time, step index, last finite energy).
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = dict(record or {})


class NonDegeneracyError(LagchaosError, ArithmeticError):
    """The partial Malliavin matrix is numerically singular on the tangent subspace."""

    def __init__(self, message, eigenvalue=None, condition=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.condition = condition


class IllConditionedError(LagchaosError, ArithmeticError):
    """A propagator matrix became too ill-conditioned to be trusted."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class CheckpointError(LagchaosError, IOError):
    """A checkpoint file is malformed, truncated or of the wrong version."""


class BadMagicError(CheckpointError):
    """The file does not start with the checkpoint magic bytes."""
