"""Prompt construction for edit-conditioned infilling.

Three layouts: the tag-style prompt (current edit first, then the associated
edits inside a <CtxEdits> wrapper), the no-edit variant (current edit only),
and the comment-style alternative. Serialization rules, pinned by golden
files: one tag per line, no indentation, block content verbatim between its
open/close tag lines, LF endings regardless of source newline style.

The insertion split puts the opening "<After>" line at the end of the prompt
(without its newline) and starts the suffix at the "</After>" line, so
prompt ++ hole ++ suffix reproduces the full serialization byte-exactly,
where hole = "\n" + one line per after-line.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass
from typing import Optional, Sequence

from .diffing import tokenize
from .edits import Edit, Example
from .errors import BudgetImpossible, CounterUnavailable

CURRENT_OPEN, CURRENT_CLOSE = "<CurrentEdit>", "</CurrentEdit>"
PREFIX_OPEN, PREFIX_CLOSE = "<Prefix>", "</Prefix>"
BEFORE_OPEN, BEFORE_CLOSE = "<Before>", "</Before>"
AFTER_OPEN, AFTER_CLOSE = "<After>", "</After>"
SUFFIX_OPEN, SUFFIX_CLOSE = "<Suffix>", "</Suffix>"
EDIT_OPEN, EDIT_CLOSE = "<Edit>", "</Edit>"
CTX_OPEN, CTX_CLOSE = "<CtxEdits>", "</CtxEdits>"

DEFAULT_SENTINEL = "<extra_id_0>"

COMMENT_OUTDATED = "// The following piece of code is outdated."
COMMENT_NEW_VERSION = "// Here is the new version of the code."
COMMENT_BLOCK_OPEN = "/*"
COMMENT_BLOCK_CLOSE = "*/"


@dataclass(frozen=True)
class InsertionPrompt:
    """The (prompt, suffix) pair fed to an infilling backend."""

    prompt: str
    suffix: str


@dataclass(frozen=True)
class FinetuneRecord:
    """Masked-span training pair: input holds one sentinel, target is the span."""

    input: str
    target: str


@dataclass(frozen=True)
class TokenBudget:
    max_tokens: int = 1024
    counter: str = "default"

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


def special_tokens() -> tuple[str, ...]:
    """Every marker a tokenizer must treat atomically.

    The fourteen four-part/wrapper markers plus the plural <CtxEdits> pair
    actually emitted by the tag layout (both singular and plural registered).
    """
    return (
        PREFIX_OPEN,
        PREFIX_CLOSE,
        SUFFIX_OPEN,
        SUFFIX_CLOSE,
        CURRENT_OPEN,
        CURRENT_CLOSE,
        "<CtxEdit>",
        "</CtxEdit>",
        EDIT_OPEN,
        EDIT_CLOSE,
        AFTER_OPEN,
        AFTER_CLOSE,
        BEFORE_OPEN,
        BEFORE_CLOSE,
        CTX_OPEN,
        CTX_CLOSE,
    )


def count_tokens(text: str, counter: str = "default") -> int:
    """Token count used for budget enforcement.

    The default counter is tokenize() per line plus one per newline; counters
    of the form "cmd:<command>" pipe the text to an external command that
    prints an integer count.
    """
    if counter == "default":
        lines = text.split("\n")
        return sum(len(tokenize(line)) for line in lines) + len(lines) - 1
    if counter.startswith("cmd:"):
        command = shlex.split(counter[len("cmd:") :])
        try:
            proc = subprocess.run(
                command, input=text.encode("utf-8"), capture_output=True, check=True
            )
            return int(proc.stdout.decode("utf-8").strip())
        except (OSError, subprocess.CalledProcessError, ValueError) as exc:
            raise CounterUnavailable(f"external counter {counter!r} failed: {exc}") from exc
    raise CounterUnavailable(f"unknown counter {counter!r}")


def hole_text(after_lines: Sequence[str]) -> str:
    """The exact string filling the insertion hole for the given after-lines."""
    return "\n" + "".join(line + "\n" for line in after_lines)


def parse_completion(raw: str) -> list[str]:
    """Recover after-lines from a raw completion.

    Truncates at the first "</After>" if any, strips at most one leading and
    one trailing newline, splits into lines; an empty remainder means zero
    lines (a pure deletion).
    """
    cut = raw.split(AFTER_CLOSE, 1)[0]
    if cut.startswith("\n"):
        cut = cut[1:]
    if cut == "":
        return []
    if cut.endswith("\n"):
        cut = cut[:-1]
    return cut.split("\n")


def _ctx_block_lines(edit: Edit) -> list[str]:
    return [
        EDIT_OPEN,
        PREFIX_OPEN,
        *edit.prefix,
        PREFIX_CLOSE,
        BEFORE_OPEN,
        *edit.before,
        BEFORE_CLOSE,
        AFTER_OPEN,
        *edit.after,
        AFTER_CLOSE,
        SUFFIX_OPEN,
        *edit.suffix,
        SUFFIX_CLOSE,
        EDIT_CLOSE,
    ]


def _render_split(
    current: Edit,
    prefix: Sequence[str],
    suffix: Sequence[str],
    ctx_edits: Optional[Sequence[Edit]],
) -> InsertionPrompt:
    """Serialize with the current-edit After left as the insertion hole.

    ctx_edits None means the no-edit layout (no <CtxEdits> wrapper at all);
    an empty sequence still emits the empty wrapper.
    """
    prompt_lines = [
        CURRENT_OPEN,
        PREFIX_OPEN,
        *prefix,
        PREFIX_CLOSE,
        BEFORE_OPEN,
        *current.before,
        BEFORE_CLOSE,
        AFTER_OPEN,
    ]
    suffix_lines = [
        AFTER_CLOSE,
        SUFFIX_OPEN,
        *suffix,
        SUFFIX_CLOSE,
        CURRENT_CLOSE,
    ]
    if ctx_edits is not None:
        suffix_lines.append(CTX_OPEN)
        for edit in ctx_edits:
            suffix_lines.extend(_ctx_block_lines(edit))
        suffix_lines.append(CTX_CLOSE)
    return InsertionPrompt(
        prompt="\n".join(prompt_lines),
        suffix="\n".join(suffix_lines) + "\n",
    )


def _build_insertion(
    ex: Example, budget: TokenBudget, include_ctx: bool
) -> InsertionPrompt:
    """Shared builder with the pinned truncation order.

    Associated edits are pruned whole, tail first; only once they are all
    gone are the current edit's prefix/suffix trimmed, dropping the line
    farthest from the Before span on the longer side first.
    """
    ctx: Optional[list[Edit]] = list(ex.ctx_edits) if include_ctx else None
    prefix = list(ex.current.prefix)
    suffix = list(ex.current.suffix)
    while True:
        split = _render_split(ex.current, prefix, suffix, ctx)
        total = count_tokens(split.prompt, budget.counter) + count_tokens(
            split.suffix, budget.counter
        )
        if total <= budget.max_tokens:
            return split
        if ctx:
            ctx.pop()
        elif prefix or suffix:
            if prefix and len(prefix) >= len(suffix):
                prefix.pop(0)
            else:
                suffix.pop()
        else:
            raise BudgetImpossible(
                f"current edit needs {total} tokens, budget is {budget.max_tokens}"
            )


def build_tag_prompt(ex: Example, budget: TokenBudget = TokenBudget()) -> InsertionPrompt:
    """Tag-style layout: <CurrentEdit> block first, then <CtxEdits>."""
    return _build_insertion(ex, budget, include_ctx=True)


def build_no_edit_prompt(ex: Example, budget: TokenBudget = TokenBudget()) -> InsertionPrompt:
    """Variant without associated edits: only the <CurrentEdit> block."""
    return _build_insertion(ex, budget, include_ctx=False)


def _comment_stanza(before: Sequence[str], after: Optional[Sequence[str]]) -> list[str]:
    lines = [
        COMMENT_OUTDATED,
        COMMENT_BLOCK_OPEN,
        *before,
        COMMENT_BLOCK_CLOSE,
        COMMENT_NEW_VERSION,
    ]
    if after is not None:
        lines.extend(after)
    return lines


def build_comment_prompt(ex: Example, budget: TokenBudget = TokenBudget()) -> str:
    """Comment-delimited layout for completion-style backends.

    One outdated/new-version stanza per associated edit, then the target's
    stanza; the text ends right after the final new-version comment line,
    which is where generation starts. Ctx stanzas are pruned tail-first
    under the budget.
    """
    ctx = list(ex.ctx_edits)
    while True:
        lines: list[str] = []
        for edit in ctx:
            lines.extend(_comment_stanza(edit.before, edit.after))
        lines.extend(_comment_stanza(ex.current.before, None))
        text = "\n".join(lines) + "\n"
        if count_tokens(text, budget.counter) <= budget.max_tokens:
            return text
        if not ctx:
            raise BudgetImpossible(
                f"target stanza alone exceeds the budget of {budget.max_tokens} tokens"
            )
        ctx.pop()


def comment_hole_offset(text: str) -> int:
    """Offset where generation starts in a comment-style prompt.

    Deterministic split: immediately after the last new-version comment line.
    """
    marker = COMMENT_NEW_VERSION + "\n"
    at = text.rfind(marker)
    if at < 0:
        raise ValueError("not a comment-style prompt: final new-version line missing")
    return at + len(marker)


def build_finetune_record(
    ex: Example,
    sentinel: str = DEFAULT_SENTINEL,
    include_ctx: bool = True,
    budget: Optional[TokenBudget] = None,
) -> FinetuneRecord:
    """Masked-span record: the tag prompt with the hole replaced by one sentinel.

    Replacing the sentinel line with the target reproduces the unmasked
    serialization; the target is the hole content, one "line\\n" per
    after-line (empty string for a pure deletion).
    """
    split = (
        _build_insertion(ex, budget, include_ctx)
        if budget is not None
        else _render_split(ex.current, ex.current.prefix, ex.current.suffix, ex.ctx_edits if include_ctx else None)
    )
    input_text = split.prompt + "\n" + sentinel + "\n" + split.suffix
    if input_text.count(sentinel) != 1:
        raise ValueError(
            f"sentinel {sentinel!r} collides with prompt content; choose another marker"
        )
    target = "".join(line + "\n" for line in ex.current.after)
    return FinetuneRecord(input=input_text, target=target)


def unmask(record: FinetuneRecord, sentinel: str = DEFAULT_SENTINEL) -> str:
    """Reconstruct the unmasked prompt by substituting the sentinel line."""
    return record.input.replace(sentinel + "\n", record.target)
