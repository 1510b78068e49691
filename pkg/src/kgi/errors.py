"""Exception types shared across the engine."""

from __future__ import annotations


class KgiError(Exception):
    """Base class for engine errors."""


class ValidationError(KgiError):
    """Caller-supplied input violates a documented contract."""


class NotFoundError(KgiError):
    """A referenced object (passage, session) does not exist."""


class CorpusFormatError(KgiError):
    """An input corpus file is malformed.

    line_number is 1-based and points at the offending record.
    """

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class ConfigurationError(KgiError):
    """The engine is missing a component required by the requested operation."""


class TransportError(KgiError):
    """A remote model endpoint could not be reached or answered badly.

    Carries retry metadata so callers can decide whether to back off,
    fall back, or surface the failure.
    """

    def __init__(self, message: str, *, endpoint: str, attempts: int, cause: Exception | None = None):
        super().__init__(message)
        self.endpoint = endpoint
        self.attempts = attempts
        self.cause = cause


class InternalError(KgiError):
    """A state the code promises is impossible was reached (e.g. a
    constrained-vocabulary generation produced an out-of-vocabulary label)."""
