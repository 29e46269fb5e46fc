"""Utility modules for kantize."""
from .logger import setup_logger, set_global_level
from .errors import (
    KantizeError,
    InvalidArgumentError,
    ShapeMismatchError,
    FormatError,
    ChecksumMismatchError,
    EmptyStreamError,
    DegenerateRangeError,
    DivergenceError,
    SweepError,
)

__all__ = [
    'setup_logger',
    'set_global_level',
    'KantizeError',
    'InvalidArgumentError',
    'ShapeMismatchError',
    'FormatError',
    'ChecksumMismatchError',
    'EmptyStreamError',
    'DegenerateRangeError',
    'DivergenceError',
    'SweepError',
]
