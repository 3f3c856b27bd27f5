"""Core domain types: file versions, located edits, benchmark examples.

All types are immutable values; line indices are 0-based everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import SpanMismatch


class NewlineStyle(Enum):
    LF = "lf"
    CRLF = "crlf"

    @property
    def separator(self) -> str:
        return "\n" if self is NewlineStyle.LF else "\r\n"


@dataclass(frozen=True)
class Version:
    """Immutable snapshot of a source file as a list of lines.

    Lines exclude their terminator; the newline style and the presence of a
    trailing newline are recorded so serialization round-trips byte-exactly.
    """

    lines: tuple[str, ...]
    newline: NewlineStyle = NewlineStyle.LF
    trailing_newline: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "lines", tuple(self.lines))

    def __len__(self) -> int:
        return len(self.lines)

    def serialize(self) -> str:
        if not self.lines:
            return ""
        sep = self.newline.separator
        text = sep.join(self.lines)
        return text + sep if self.trailing_newline else text

    @classmethod
    def deserialize(cls, text: str) -> "Version":
        """Ingest raw file content.

        CRLF is recorded only when every newline in the file is CRLF (no bare
        LF or CR); anything else is treated as LF so stray carriage returns
        stay inside line content and the round-trip remains exact.
        """
        if text == "":
            return cls((), NewlineStyle.LF, trailing_newline=False)
        lf = text.count("\n")
        crlf = text.count("\r\n")
        cr = text.count("\r")
        style = NewlineStyle.CRLF if lf > 0 and crlf == lf and cr == crlf else NewlineStyle.LF
        sep = style.separator
        trailing = text.endswith(sep)
        body = text[: -len(sep)] if trailing else text
        return cls(tuple(body.split(sep)), style, trailing_newline=trailing)


@dataclass(frozen=True)
class LineSpan:
    """Half-open line range [start, end); start == end is a pure-insertion point."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.start > self.end:
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class EditProvenance:
    """Where an edit came from and its position within its edit sequence."""

    repo_id: str = ""
    file_path: str = ""
    revision_id: Optional[str] = None
    timestamp: Optional[int] = None
    order_index: int = 0


@dataclass(frozen=True)
class Edit:
    """A located edit as the four-part window (prefix, before, after, suffix).

    before occupies `span` in the source version; prefix/suffix are the
    unchanged lines immediately around it, capped by the diff configuration.
    """

    prefix: tuple[str, ...]
    before: tuple[str, ...]
    after: tuple[str, ...]
    suffix: tuple[str, ...]
    span: LineSpan
    provenance: EditProvenance = field(default_factory=EditProvenance)

    def __post_init__(self) -> None:
        for name in ("prefix", "before", "after", "suffix"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.before == self.after:
            raise ValueError("an edit must change something: before == after")
        if len(self.before) != len(self.span):
            raise ValueError(
                f"span length {len(self.span)} does not match before length {len(self.before)}"
            )


@dataclass(frozen=True)
class Example:
    """One benchmark item: a target edit plus its associated edits.

    current.after is the ground truth, hidden at prediction time;
    future_versions supports the any-of-K-futures protocol.
    """

    id: str
    current: Edit
    ctx_edits: tuple[Edit, ...] = ()
    future_versions: Optional[tuple[Version, ...]] = None
    tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("example id must be non-empty")
        object.__setattr__(self, "ctx_edits", tuple(self.ctx_edits))
        if self.future_versions is not None:
            object.__setattr__(self, "future_versions", tuple(self.future_versions))
        object.__setattr__(self, "tags", frozenset(self.tags))


@dataclass(frozen=True)
class Prediction:
    """One ranked candidate for the target edit's after-lines."""

    rank: int
    text: tuple[str, ...]
    score: Optional[float] = None

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        object.__setattr__(self, "text", tuple(self.text))


def _check_span(edit: Edit, source: Version) -> None:
    span = edit.span
    if span.end > len(source.lines):
        raise SpanMismatch(
            f"span ({span.start}, {span.end}) exceeds version of {len(source.lines)} lines"
        )
    actual = source.lines[span.start : span.end]
    if actual != edit.before:
        raise SpanMismatch(
            f"lines at span ({span.start}, {span.end}) do not match the edit's before-lines"
        )


def apply_edit(edit: Edit, source: Version) -> Version:
    """Replace the edit's span in `source` with its after-lines.

    Raises SpanMismatch unless `source` contains the before-lines exactly at
    edit.span. Pure function; all other lines are untouched.
    """
    _check_span(edit, source)
    new_lines = source.lines[: edit.span.start] + edit.after + source.lines[edit.span.end :]
    return Version(new_lines, source.newline, source.trailing_newline)


def edited_region(edit: Edit, source: Version) -> Version:
    """The local window prefix ++ after ++ suffix after applying the edit."""
    _check_span(edit, source)
    return Version(edit.prefix + edit.after + edit.suffix, source.newline, source.trailing_newline)


def apply_edits(edits: Iterable[Edit], source: Version) -> Version:
    """Apply several non-overlapping edits, bottom-to-top so spans stay valid."""
    result = source
    for edit in sorted(edits, key=lambda e: e.span.start, reverse=True):
        result = apply_edit(edit, result)
    return result


def window_slice(source: Sequence[str], span: LineSpan, context_lines: int) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(prefix, suffix) of up to context_lines unchanged lines around a span."""
    lo = max(0, span.start - context_lines)
    prefix = tuple(source[lo : span.start])
    suffix = tuple(source[span.end : span.end + context_lines])
    return prefix, suffix
