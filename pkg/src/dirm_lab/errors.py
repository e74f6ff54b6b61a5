"""Exception hierarchy shared across the package."""


class DirmLabError(Exception):
    """Base class for all package errors."""


class ValidationError(DirmLabError, ValueError):
    """A value or configuration violates a documented invariant."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class CyclicGraph(ValidationError):
    pass


class UnknownName(ValidationError):
    pass


class Unsupported(DirmLabError):
    pass


class SingularCovariance(DirmLabError, ArithmeticError):
    pass


class DimensionMismatch(ValidationError):
    pass


class LabelDomain(ValidationError):
    pass


class EmptySplit(ValidationError):
    pass


class NonFiniteLoss(DirmLabError, ArithmeticError):
    """Training produced a NaN or infinite loss.

    ``trace`` holds the partial training trace up to the failing epoch.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ParseError(DirmLabError):
    def __init__(self, message, line=None, column=None):
        loc = "" if line is None else f" (line {line}, column {column})"
        super().__init__(message + loc)
        self.line = line
        self.column = column
