"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so keep the classes coarse:
format problems, shape problems, numeric-range problems.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EngineError):
    """Operands have incompatible or invalid dimensions."""


class NumericError(EngineError):
    """A computation produced non-finite values."""


class NumericRangeError(NumericError):
    """An incremental update left the representable range.

    Raised by the incremental softmax when a logit delta would overflow
    exp(); the caller is expected to recompute the affected row densely.
    """


class FormatError(EngineError):
    """A file does not conform to one of the on-disk formats."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(FormatError):
    """File declares a format version this build cannot read."""


class TruncatedPayloadError(FormatError):
    """Payload is shorter than the header claims."""


class UnsupportedStageError(EngineError):
    """A stage was requested that the operation does not cover."""
