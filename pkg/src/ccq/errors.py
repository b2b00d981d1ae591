"""Exception types raised by the codec."""

from __future__ import annotations


class CcqError(Exception):
    """Base class for all codec errors."""


class ConfigurationError(CcqError, ValueError):
    """An encoding configuration or option combination is not supported."""


class CodeDomainError(CcqError, ValueError):
    """A code or state value lies outside its valid range."""


class TransitionError(CodeDomainError):
    """A state sequence violates the overlap rule between adjacent states."""


class ShapeError(CcqError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class EncodingError(CcqError, ValueError):
    """Values do not fit the packed layout they are being written into."""


class FormatError(CcqError):
    """A container file is malformed.

    Attributes:
        offset: byte offset at which the problem was detected, if known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
