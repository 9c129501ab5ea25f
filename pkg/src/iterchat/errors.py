"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class IterChatError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(IterChatError):
    """Invalid schema document or schema invariant violation."""


class DraftParseError(SchemaError):
    """Backend reply could not be turned into a schema.

    Carries the raw reply so callers can log or inspect it.
    """

    def __init__(self, message: str, raw_reply: str):
        super().__init__(message)
        self.raw_reply = raw_reply


class GainError(IterChatError):
    """Strict-mode gain application failure (names the slot/value)."""


class DatasetError(IterChatError):
    """Malformed dialogue/record data or a broken record sequence."""


class SamplerError(IterChatError):
    """Unsatisfiable sampling constraint or rejected realization."""


class GenerationAborted(SamplerError):
    """Too many realization failures; carries the partial output."""

    def __init__(self, message: str, partial: list):
        super().__init__(message)
        self.partial = partial


class BackendError(IterChatError):
    """Generation backend failure (HTTP error, retries exhausted, ...)."""


class BackendProtocolError(BackendError):
    """Response did not match the chat-completions wire shape."""

    def __init__(self, message: str, raw_body: str = ""):
        super().__init__(message)
        self.raw_body = raw_body


class ExtractionAborted(IterChatError):
    """Backend failure mid-dialogue; carries the partial trajectory."""

    def __init__(self, message: str, partial: list):
        super().__init__(message)
        self.partial = partial


class ServiceError(IterChatError):
    """Annotation service error with an HTTP-ish status code."""

    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status
