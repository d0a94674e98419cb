"""Exception hierarchy shared across the package."""


class PcfieldError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PcfieldError, ValueError):
    """An input violates a documented precondition or invariant."""


class DimensionError(ValidationError):
    """Operands have incompatible or empty dimensions."""


class NotPositiveSemidefiniteError(ValidationError):
    """A matrix required to be PSD has a significantly negative eigenvalue."""


class SingularMatrixError(ValidationError):
    """A matrix required to be invertible (or full rank) is rank deficient."""


class FormatError(PcfieldError, ValueError):
    """A file does not conform to the expected on-disk format."""
