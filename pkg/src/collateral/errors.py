"""Exception hierarchy shared by every module.

Validation errors (bad input, bad file, bad config) are distinguished from
runtime failures so the CLI can map them onto different exit codes.
"""


class CollateralError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(CollateralError):
    """Input rejected before any work was done."""


class FormatError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class BoundsError(ValidationError):
    pass


class SpecError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class ResampleError(ValidationError):
    pass
