"""Exception hierarchy.

Every error carries the CLI exit code it maps to, so the command line layer
can translate failures without a lookup table.
"""


class MetaKernelError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(MetaKernelError, ValueError):
    """Bad arguments or malformed inputs (configuration-level problem)."""

    exit_code = 2


class ShapeError(ValidationError):
    """Array shapes are inconsistent with each other."""


class NumericError(MetaKernelError, ArithmeticError):
    """A numerical routine failed (no convergence, NaN, ...)."""

    exit_code = 3


class SingularMatrixError(NumericError):
    """A matrix could not be inverted, or a matrix function hit a pole."""


class PSDViolationError(NumericError):
    """A matrix that must be positive semidefinite has a negative eigenvalue."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ResourceError(MetaKernelError):
    """A request exceeds a hard resource cap (e.g. network width)."""

    exit_code = 4
