"""Error hierarchy for xmlforest."""

from typing import Iterable, Optional


class XmlForestError(Exception):
    """Base class for all xmlforest errors."""


class DimensionMismatchError(XmlForestError, ValueError):
    """Two operands disagree on their logical dimension."""


class SparseFormatError(XmlForestError, ValueError):
    """A sparse vector or matrix violates its storage invariants."""


class ConfigError(XmlForestError, ValueError):
    """Invalid configuration file line or value."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataFormatError(XmlForestError):
    """Malformed dataset file. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelFormatError(XmlForestError):
    """Model or payload bytes cannot be decoded."""


class BadMagicError(ModelFormatError):
    """Stream does not start with the expected magic bytes."""


class VersionMismatchError(ModelFormatError):
    """Stream was written with an unsupported format version."""

    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(
            f"format version {found} is not supported (expected {expected})"
        )


class TruncatedModelError(ModelFormatError):
    """Stream ended before the declared content was read."""


class TransportError(XmlForestError):
    """A message could not be delivered. Retriable."""

    def __init__(self, message: str, peer: Optional[int] = None, attempt: int = 0):
        self.peer = peer
        self.attempt = attempt
        if peer is not None:
            message = f"peer {peer}: {message}"
        super().__init__(message)


class TransportTimeoutError(TransportError):
    """No message arrived within the receive timeout."""


class MasterUnreachableError(XmlForestError):
    """The master could not be reached after all retries."""


class DuplicateReportError(XmlForestError):
    """A worker reported more than once."""


class MissingWorkerError(XmlForestError):
    """One or more workers never reported."""

    def __init__(self, missing: Iterable[int]):
        self.missing = sorted(missing)
        super().__init__(f"no report from worker(s) {self.missing}")


class CommAccountingError(XmlForestError):
    """Measured communication does not match the predicted counts."""


class InvariantViolationError(XmlForestError):
    """A training-time structural check failed (enabled with check_invariants)."""
