"""Exception types shared across the package.

Exit-code mapping used by the CLI: ValidationError (and subclasses) exit 1,
BackendError (and subclasses) exit 2.
"""

from __future__ import annotations


class DecMetricsError(Exception):
    """Base class for all package errors."""


class ValidationError(DecMetricsError, ValueError):
    """Invalid input data or configuration."""


class PathError(ValidationError):
    """A node path does not address an existing node."""


class BackendError(DecMetricsError):
    """A remote backend failed (unreachable, timeout after retries, non-200)."""

    def __init__(self, message: str, *, index: int | None = None):
        super().__init__(message)
        self.index = index  # failing pair index for batch operations


class ProtocolError(BackendError):
    """A backend answered with a malformed body; carries the raw body."""

    def __init__(self, message: str, *, body: str = "", index: int | None = None):
        super().__init__(message, index=index)
        self.body = body


class ParseError(DecMetricsError):
    """A generation reply could not be parsed; carries the raw reply."""

    def __init__(self, message: str, *, reply: str = ""):
        super().__init__(message)
        self.reply = reply


class NonConvergenceError(DecMetricsError):
    """A claim was still splittable when the recursion depth cap was reached."""

    def __init__(self, claim_text: str, depth: int):
        super().__init__(
            f"claim still splittable at depth {depth}: {claim_text!r}"
        )
        self.claim_text = claim_text
        self.depth = depth


class SummaryNotFoundError(DecMetricsError):
    """No usable summary exists for the requested entity."""


class DisambiguationError(DecMetricsError):
    """The entity name resolves to a disambiguation page, not an article."""


class ReverseCheckAborted(DecMetricsError):
    """Reverse-check filtering hit a backend error; carries resumable progress."""

    def __init__(self, message: str, *, completed: int, kept: list, rejected: list):
        super().__init__(message)
        self.completed = completed
        self.kept = kept
        self.rejected = rejected
