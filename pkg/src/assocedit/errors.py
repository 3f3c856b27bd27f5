"""Exception hierarchy shared across the toolkit.

Two families matter for the CLI exit-code contract: DataError (exit 2)
and RemoteFailure (exit 3). Everything else is a plain ToolkitError.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class DataError(ToolkitError):
    """Invalid or inconsistent input data (CLI exit code 2)."""


class SpanMismatch(DataError):
    """The source version does not contain the edit's before-lines at its span."""


class PoolExhausted(DataError):
    """A sampling pool has fewer candidates than requested after scoping."""


class BudgetImpossible(DataError):
    """The current edit alone exceeds the token budget even fully trimmed."""


class CounterUnavailable(DataError):
    """A configured external token counter is missing or failed."""


class MissingPredictions(DataError):
    """Strict evaluation found an example with no prediction set."""


class SchemaError(DataError):
    """A JSONL record violates the dataset schema."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class PatchParseError(DataError):
    """A unified-diff patch file could not be parsed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = "".join(
            part
            for part in (
                f"{path}:" if path else "",
                f"{line}: " if line is not None else " " if path else "",
            )
        )
        super().__init__(f"{where}{message}".strip())
        self.path = path
        self.line = line


class BadRatios(DataError):
    """Split ratios do not form a valid partition."""


class VcsUnavailable(DataError):
    """The external version-control command is missing or the path is not a repository."""


class RemoteFailure(ToolkitError):
    """Base class for remote-backend failures (CLI exit code 3)."""


class AuthError(RemoteFailure):
    """Credential missing or rejected by the provider."""


class TransportError(RemoteFailure):
    """Transient transport failures persisted through all retry attempts."""


class BackendError(RemoteFailure):
    """The provider returned a non-retryable error; carries the provider message."""
