from __future__ import annotations

from typing import Optional


class RefineError(Exception):
    """Base class for every error raised by the library."""

    error_code = "refine_error"

    def __init__(self, message: str, details: Optional[str] = None, suggestion: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.details = details
        self.suggestion = suggestion

    def __reduce__(self):
        # subclasses take different constructor arguments; rebuild from state instead
        return _rebuild, (type(self), self.message, self.__dict__)

    def to_dict(self) -> dict:
        return {
            "error_code": self.error_code,
            "message": self.message,
            "details": self.details,
            "suggestion": self.suggestion,
        }


class ValidationFailed(RefineError):
    """An invariant of a core type does not hold.

    `kind` is one of ``dimension-mismatch``, ``out-of-range`` or ``non-finite``.
    """

    error_code = "validation_failed"

    def __init__(self, field: str, kind: str, details: Optional[str] = None):
        super().__init__(f"{kind} in field '{field}'", details=details)
        self.field = field
        self.kind = kind


class RasterFormatError(RefineError):
    """A file could not be decoded into a core type."""

    error_code = "raster_format"

    def __init__(self, path, kind: str, details: Optional[str] = None):
        super().__init__(f"{kind}: {path}", details=details)
        self.path = str(path)
        self.kind = kind


class PipelineError(RefineError):
    error_code = "pipeline_error"


class UsageError(RefineError):
    error_code = "usage_error"


def _rebuild(cls, message: str, state: dict) -> RefineError:
    error = cls.__new__(cls)
    Exception.__init__(error, message)
    error.__dict__.update(state)
    return error
