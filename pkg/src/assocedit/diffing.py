"""Line-level diffing and edit classification.

diff_versions computes a shortest edit script (Myers' O(ND) greedy
algorithm) over byte-exact lines, merges nearby hunks per the granularity
policy, and partitions each hunk into the four-part edit record.
Whitespace-insensitive comparison is reserved for evaluation; diffs stay
faithful to the file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

from .edits import Edit, EditProvenance, LineSpan, Version, window_slice


@dataclass(frozen=True)
class GranularityConfig:
    """Policy for what counts as one edit.

    Hunks separated by at most merge_gap unchanged lines fuse into a single
    edit whose before/after keep the interior lines; prefix/suffix hold up
    to context_lines unchanged lines each. parse_check names the validation
    hook (see PARSE_CHECKS) downstream filter stages apply to edit windows;
    diffing itself never rejects hunks.
    """

    merge_gap: int = 2
    context_lines: int = 10
    parse_check: Optional[str] = None

    def __post_init__(self) -> None:
        if self.merge_gap < 0 or self.context_lines < 0:
            raise ValueError("merge_gap and context_lines must be >= 0")


class SimpleKind(Enum):
    PURE_DELETION = "PureDeletion"
    PURE_INSERTION = "PureInsertion"
    RENAME = "Rename"
    NOT_SIMPLE = "NotSimple"


# Word tokens are alphanumeric runs; every other non-space character stands
# alone, so "];" splits into "]" and ";". Whitespace separates and is dropped.
_TOKEN_RE = re.compile(r"[A-Za-z0-9]+|[^A-Za-z0-9\s]")


def tokenize(text: str) -> list[str]:
    """Split a line into identifier/number/operator/punctuation tokens."""
    return _TOKEN_RE.findall(text)


def _is_identifier(token: str) -> bool:
    return bool(token) and token[0].isalpha()


# ---------------------------------------------------------------------------
# Myers shortest edit script
# ---------------------------------------------------------------------------


def _myers_matches(a: Sequence[str], b: Sequence[str]) -> list[tuple[int, int]]:
    """Indices (i, j) with a[i] == b[j] along a shortest edit script."""
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return []
    max_d = n + m
    # v[k] = furthest x along diagonal k; snapshots kept for backtracking
    v: dict[int, int] = {1: 0}
    trace: list[dict[int, int]] = []
    for d in range(max_d + 1):
        trace.append(dict(v))
        for k in range(-d, d + 1, 2):
            if k == -d or (k != d and v.get(k - 1, -1) < v.get(k + 1, -1)):
                x = v[k + 1]
            else:
                x = v[k - 1] + 1
            y = x - k
            while x < n and y < m and a[x] == b[y]:
                x += 1
                y += 1
            v[k] = x
            if x >= n and y >= m:
                return _backtrack(trace, a, b, d)
    raise AssertionError("unreachable: Myers search exhausted")


def _backtrack(
    trace: list[dict[int, int]], a: Sequence[str], b: Sequence[str], d_final: int
) -> list[tuple[int, int]]:
    matches: list[tuple[int, int]] = []
    x, y = len(a), len(b)
    for d in range(d_final, 0, -1):
        v = trace[d]
        k = x - y
        if k == -d or (k != d and v.get(k - 1, -1) < v.get(k + 1, -1)):
            prev_k = k + 1
        else:
            prev_k = k - 1
        prev_x = v[prev_k]
        prev_y = prev_x - prev_k
        while x > prev_x and y > prev_y:
            matches.append((x - 1, y - 1))
            x, y = x - 1, y - 1
        x, y = prev_x, prev_y
    while x > 0 and y > 0:
        matches.append((x - 1, y - 1))
        x, y = x - 1, y - 1
    matches.reverse()
    return matches


@dataclass(frozen=True)
class Hunk:
    """A contiguous replaced region: a[a_start:a_end] -> b[b_start:b_end]."""

    a_start: int
    a_end: int
    b_start: int
    b_end: int


def raw_hunks(a: Sequence[str], b: Sequence[str]) -> list[Hunk]:
    """Unmerged hunks from the shortest edit script, top to bottom."""
    matches = _myers_matches(a, b)
    hunks: list[Hunk] = []
    ai = bi = 0
    for (mi, mj) in matches:
        if ai < mi or bi < mj:
            hunks.append(Hunk(ai, mi, bi, mj))
        ai, bi = mi + 1, mj + 1
    if ai < len(a) or bi < len(b):
        hunks.append(Hunk(ai, len(a), bi, len(b)))
    return hunks


def merge_hunks(hunks: Sequence[Hunk], merge_gap: int) -> list[Hunk]:
    """Fuse hunks whose gap of unchanged lines is <= merge_gap."""
    merged: list[Hunk] = []
    for hunk in hunks:
        if merged and hunk.a_start - merged[-1].a_end <= merge_gap:
            prev = merged[-1]
            merged[-1] = Hunk(prev.a_start, hunk.a_end, prev.b_start, hunk.b_end)
        else:
            merged.append(hunk)
    return merged


def partition_hunk(
    a: Version,
    hunk_span: LineSpan,
    after_lines: Sequence[str],
    cfg: GranularityConfig,
    provenance: EditProvenance = EditProvenance(),
) -> Edit:
    """Build the four-part edit for one hunk of the source version."""
    prefix, suffix = window_slice(a.lines, hunk_span, cfg.context_lines)
    return Edit(
        prefix=prefix,
        before=tuple(a.lines[hunk_span.start : hunk_span.end]),
        after=tuple(after_lines),
        suffix=suffix,
        span=hunk_span,
        provenance=provenance,
    )


def diff_versions(
    a: Version,
    b: Version,
    cfg: GranularityConfig = GranularityConfig(),
    provenance: EditProvenance = EditProvenance(),
) -> list[Edit]:
    """Non-overlapping edits, top to bottom, that turn `a` into `b`.

    Spans are in `a` coordinates: apply the edits bottom-to-top (or via
    apply_edits) to reconstruct `b`. Identical inputs yield an empty list.
    order_index numbers the edits top to bottom starting from
    provenance.order_index.
    """
    hunks = merge_hunks(raw_hunks(a.lines, b.lines), cfg.merge_gap)
    edits = []
    for i, hunk in enumerate(hunks):
        prov = EditProvenance(
            repo_id=provenance.repo_id,
            file_path=provenance.file_path,
            revision_id=provenance.revision_id,
            timestamp=provenance.timestamp,
            order_index=provenance.order_index + i,
        )
        edits.append(
            partition_hunk(
                a,
                LineSpan(hunk.a_start, hunk.a_end),
                b.lines[hunk.b_start : hunk.b_end],
                cfg,
                prov,
            )
        )
    return edits


# ---------------------------------------------------------------------------
# Edit classification
# ---------------------------------------------------------------------------

_LINE_BREAK = "\n"  # pseudo-token keeping token streams line-aligned


def _token_stream(lines: Sequence[str]) -> list[str]:
    stream: list[str] = []
    for i, line in enumerate(lines):
        if i:
            stream.append(_LINE_BREAK)
        stream.extend(tokenize(line))
    return stream


def classify_simple(edit: Edit) -> SimpleKind:
    """Categorize an edit for the "simple" filter rules.

    Rename means the before/after token streams are identical except under a
    single consistent substitution src -> dst on identifier tokens, with dst
    not otherwise occurring in before (the substitution stays bijective).
    """
    if not edit.after:
        return SimpleKind.PURE_DELETION
    if not edit.before:
        return SimpleKind.PURE_INSERTION
    btoks = _token_stream(edit.before)
    atoks = _token_stream(edit.after)
    if len(btoks) != len(atoks):
        return SimpleKind.NOT_SIMPLE
    changed = {(tb, ta) for tb, ta in zip(btoks, atoks) if tb != ta}
    if len(changed) != 1:
        return SimpleKind.NOT_SIMPLE
    src, dst = next(iter(changed))
    if not (_is_identifier(src) and _is_identifier(dst)):
        return SimpleKind.NOT_SIMPLE
    if any(ta != (dst if tb == src else tb) for tb, ta in zip(btoks, atoks)):
        return SimpleKind.NOT_SIMPLE
    if dst in btoks:
        return SimpleKind.NOT_SIMPLE
    return SimpleKind.RENAME


def _token_set(lines: Sequence[str]) -> set[str]:
    tokens: set[str] = set()
    for line in lines:
        tokens.update(tokenize(line))
    return tokens


def has_alien_insertion(target: Edit, ctx: Sequence[Edit]) -> bool:
    """True iff target.after introduces a token absent from every known part.

    Known parts: the target's prefix/before/suffix plus all four parts of
    each associated edit. Monotone: extra ctx edits can only flip True->False.
    """
    known = _token_set(target.prefix) | _token_set(target.before) | _token_set(target.suffix)
    for edit in ctx:
        known |= _token_set(edit.prefix)
        known |= _token_set(edit.before)
        known |= _token_set(edit.after)
        known |= _token_set(edit.suffix)
    return not _token_set(target.after) <= known


# ---------------------------------------------------------------------------
# Parse-check hooks
# ---------------------------------------------------------------------------

_OPENERS = {"(": ")", "[": "]", "{": "}"}
_CLOSERS = {")", "]", "}"}


def balanced_delimiters(lines: Sequence[str]) -> bool:
    """Default parse check: round/square/curly brackets balance across lines.

    A deliberately shallow stand-in for a real parser; delimiters inside
    string literals are not special-cased.
    """
    stack: list[str] = []
    for line in lines:
        for ch in line:
            if ch in _OPENERS:
                stack.append(_OPENERS[ch])
            elif ch in _CLOSERS:
                if not stack or stack.pop() != ch:
                    return False
    return not stack


PARSE_CHECKS: dict[str, Callable[[Sequence[str]], bool]] = {
    "balanced": balanced_delimiters,
}


def register_parse_check(name: str, check: Callable[[Sequence[str]], bool]) -> None:
    """Register an external validation hook under an identifier."""
    PARSE_CHECKS[name] = check


def resolve_parse_check(name: Optional[str]) -> Callable[[Sequence[str]], bool]:
    if name is None:
        name = "balanced"
    try:
        return PARSE_CHECKS[name]
    except KeyError:
        raise KeyError(f"unknown parse check {name!r}; registered: {sorted(PARSE_CHECKS)}")
