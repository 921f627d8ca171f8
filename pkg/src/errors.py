"""Error types raised across the sampler stack.

Every concrete error also derives from the builtin it refines so callers can
catch either the specific class or ValueError/RuntimeError.
"""
from __future__ import annotations


class DLPSError(Exception):
    """Root of all library errors."""


class TokenRangeError(DLPSError, ValueError):
    pass


class NormalizationError(DLPSError, ValueError):
    pass


class DecodeError(DLPSError, ValueError):
    pass


class ShapeError(DLPSError, ValueError):
    pass


class SingularityError(DLPSError, ZeroDivisionError):
    pass


class ConfigurationError(DLPSError, ValueError):
    pass


class DegenerateWeightsError(DLPSError, RuntimeError):
    pass


class UnsupportedModeError(DLPSError, NotImplementedError):
    pass


class CapacityError(DLPSError, MemoryError):
    pass


class LogitsFormatError(DLPSError, ValueError):
    pass
