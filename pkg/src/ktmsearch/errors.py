"""Exception types shared across the package."""
from __future__ import annotations


class KtmSearchError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(KtmSearchError):
    """A component was asked to run with an unusable configuration."""


class UsageError(KtmSearchError):
    """Bad command-line arguments; mapped to exit code 64."""


class BenchmarkFormatError(KtmSearchError):
    """A benchmark or calibration file could not be parsed."""

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class FormatVersionError(KtmSearchError):
    """A persisted file declares a format version newer than this build."""


class TransportError(KtmSearchError):
    """A remote completion backend failed after exhausting retries."""


class ReportError(KtmSearchError):
    """An event log could not be consumed for reporting."""


class TransferFailedError(KtmSearchError):
    """A transfer model failed mid-run; carries the sandbox verdict."""

    def __init__(self, message: str, verdict=None):
        super().__init__(message)
        self.verdict = verdict
