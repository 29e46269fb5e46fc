"""
Exception types raised by kantize.
Each subclasses the closest builtin so callers may catch either.
"""


class KantizeError(Exception):
    """Base class for all kantize errors."""


class InvalidArgumentError(KantizeError, ValueError):
    """An argument is outside its documented range."""


class ShapeMismatchError(KantizeError, ValueError):
    """Tensor shapes do not compose."""


class FormatError(KantizeError, ValueError):
    """A file does not follow its declared on-disk format."""


class ChecksumMismatchError(FormatError):
    """Stored payload checksum does not match the payload."""


class EmptyStreamError(KantizeError, ValueError):
    """Range calibration received no data."""


class DegenerateRangeError(KantizeError, ValueError):
    """A quantization range collapsed to a single value."""


class DivergenceError(KantizeError, RuntimeError):
    """Training produced a non-finite loss."""


class SweepError(KantizeError):
    """A sweep configuration failed to evaluate."""

    def __init__(self, message: str, config=None):
        super().__init__(message)
        self.config = config
