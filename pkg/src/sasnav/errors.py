"""Exception types raised across the package."""


class SasError(Exception):
    """Base class for all package errors."""


class ValidationError(SasError, ValueError):
    """Invalid input or configuration."""


class MidpointNotZero(ValidationError):
    pass


class NonPositiveRange(ValidationError):
    pass


class EmptyExtent(ValidationError):
    pass


class PhantomOutOfBounds(ValidationError):
    pass


class CoincidentPoint(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class InconsistentStride(ValidationError):
    pass


class FormatError(ValidationError):
    """A data file has the wrong magic, version or layout."""


class NumericalError(SasError):
    """Base class for failures of the estimation numerics."""


class DegenerateIntersection(NumericalError):
    """The two pings observe (numerically) orthogonal subspaces."""


class MaxEvaluations(NumericalError):
    """An optimizer stage exhausted its evaluation budget."""
