"""Prediction backends: a remote insertion-API client and offline baselines.

The mirror backend is a deterministic, line-literal edit-transfer rule: it
substitutes whole lines of the target's before-text using the line-aligned
mappings of the associated edits. It exists so the test suite has an
offline oracle and so the copy-based-baseline limitation (it cannot produce
lines that never appeared in an associated edit) is demonstrable at desk
scale. The echo backend is the null model that predicts no change.
"""

from __future__ import annotations

import os
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Sequence

import requests

from .edits import Edit, EditProvenance, LineSpan, Prediction
from .errors import AuthError, BackendError, TransportError
from .prompting import (
    AFTER_CLOSE,
    AFTER_OPEN,
    BEFORE_CLOSE,
    BEFORE_OPEN,
    CTX_CLOSE,
    CTX_OPEN,
    CURRENT_OPEN,
    EDIT_CLOSE,
    EDIT_OPEN,
    InsertionPrompt,
    hole_text,
    parse_completion,
)

API_KEY_ENV = "GRACE_API_KEY"
_REQUEST_TIMEOUT_S = 60.0


class BackendKind(Enum):
    REMOTE_INSERTION = "remote"
    MIRROR = "mirror"
    ECHO = "echo"


@dataclass(frozen=True)
class InferenceParams:
    n: int = 5
    temperature: float = 0.1
    max_tokens: int = 256
    stop: str = AFTER_CLOSE
    beam_width: Optional[int] = 5

    def __post_init__(self) -> None:
        if self.n < 1 or self.max_tokens < 1 or self.temperature < 0:
            raise ValueError("need n >= 1, max_tokens >= 1, temperature >= 0")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff_ms: int = 100


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    endpoint: Optional[str] = None
    model_name: Optional[str] = None
    max_concurrency: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        if self.kind is BackendKind.REMOTE_INSERTION and not self.endpoint:
            raise ValueError("remote insertion backend requires an endpoint")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


# One semaphore/session pair per config value, shared across caller threads
# so total in-flight remote requests stay bounded globally.
_shared_lock = threading.Lock()
_shared_state: dict[BackendConfig, tuple[threading.BoundedSemaphore, requests.Session]] = {}


def _limiter(cfg: BackendConfig) -> tuple[threading.BoundedSemaphore, requests.Session]:
    with _shared_lock:
        state = _shared_state.get(cfg)
        if state is None:
            state = (threading.BoundedSemaphore(cfg.max_concurrency), requests.Session())
            _shared_state[cfg] = state
        return state


@dataclass(frozen=True)
class ParsedTagPrompt:
    """Structure recovered from an insertion prompt by the offline backends."""

    before: tuple[str, ...]
    ctx: tuple[Edit, ...]


def parse_tag_prompt(prompt: InsertionPrompt) -> ParsedTagPrompt:
    """Recover the current before-lines and ctx edits from the tag layout.

    Content lines that exactly equal a marker line would confuse this
    scan; acceptable for a desk-scale baseline over real code. Structurally
    malformed prompts raise BackendError.
    """
    prompt_lines = prompt.prompt.split("\n")
    suffix_lines = prompt.suffix.split("\n")
    if suffix_lines and suffix_lines[-1] == "":
        suffix_lines.pop()
    lines = prompt_lines + suffix_lines

    def block(start: int, open_tag: str, close_tag: str) -> tuple[list[str], int]:
        if start >= len(lines) or lines[start] != open_tag:
            raise BackendError(f"malformed tag prompt: expected {open_tag} at line {start}")
        try:
            end = lines.index(close_tag, start + 1)
        except ValueError:
            raise BackendError(f"malformed tag prompt: unclosed {open_tag}") from None
        return lines[start + 1 : end], end + 1

    before: list[str] = []
    i = 0
    current_section = False
    while i < len(lines):
        line = lines[i]
        if line == CURRENT_OPEN:
            current_section = True
            i += 1
        elif current_section and line == BEFORE_OPEN:
            before, i = block(i, BEFORE_OPEN, BEFORE_CLOSE)
            current_section = False
        elif line == CTX_OPEN:
            break
        else:
            i += 1

    ctx: list[Edit] = []
    while i < len(lines) and lines[i] != CTX_CLOSE:
        if lines[i] == EDIT_OPEN:
            j = i + 1
            parts: dict[str, list[str]] = {}
            for open_tag, close_tag, name in (
                ("<Prefix>", "</Prefix>", "prefix"),
                (BEFORE_OPEN, BEFORE_CLOSE, "before"),
                (AFTER_OPEN, AFTER_CLOSE, "after"),
                ("<Suffix>", "</Suffix>", "suffix"),
            ):
                parts[name], j = block(j, open_tag, close_tag)
            if j >= len(lines) or lines[j] != EDIT_CLOSE:
                raise BackendError("malformed tag prompt: unterminated <Edit> block")
            i = j + 1
            if parts["before"] == parts["after"]:
                continue  # degenerate block; never emitted by our builders
            ctx.append(
                Edit(
                    prefix=tuple(parts["prefix"]),
                    before=tuple(parts["before"]),
                    after=tuple(parts["after"]),
                    suffix=tuple(parts["suffix"]),
                    span=LineSpan(0, len(parts["before"])),
                    provenance=EditProvenance(order_index=len(ctx)),
                )
            )
        else:
            i += 1
    return ParsedTagPrompt(before=tuple(before), ctx=tuple(ctx))


def _normalize_line(line: str) -> str:
    return " ".join(line.split())


def mirror_transform(ctx: Sequence[Edit], before: Sequence[str]) -> list[str]:
    """Line-literal edit transfer.

    Each ctx edit contributes a line-aligned mapping: before-line i maps to
    after-line i; the last before-line absorbs any extra after-lines, and
    before-lines beyond the after-length map to nothing (deletion). Lines of
    `before` are matched by whitespace-normalized equality; the earliest ctx
    edit wins conflicts, unmatched lines pass through.
    """
    mapping: dict[str, list[str]] = {}
    for edit in ctx:
        nb, na = len(edit.before), len(edit.after)
        for i, line in enumerate(edit.before):
            if i == nb - 1 and na >= nb:
                replacement = list(edit.after[i:])
            elif i < na:
                replacement = [edit.after[i]]
            else:
                replacement = []
            mapping.setdefault(_normalize_line(line), replacement)
    out: list[str] = []
    for line in before:
        key = _normalize_line(line)
        if key in mapping:
            out.extend(mapping[key])
        else:
            out.append(line)
    return out


def remote_insertion_call(
    cfg: BackendConfig, prompt: InsertionPrompt, params: InferenceParams
) -> dict[str, Any]:
    """One logical insertion request with bounded retries.

    Transient failures (connection errors, 429, 5xx) back off exponentially
    with full jitter; 401/403 raise AuthError, other provider errors raise
    BackendError with the provider message. The shared per-config semaphore
    bounds in-flight requests across threads.
    """
    api_key = os.environ.get(API_KEY_ENV)
    if not api_key:
        raise AuthError(f"{API_KEY_ENV} is not set; the remote backend needs a credential")
    body: dict[str, Any] = {
        "prompt": prompt.prompt,
        "suffix": prompt.suffix,
        "n": params.n,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "stop": params.stop,
    }
    if cfg.model_name:
        body["model"] = cfg.model_name
    semaphore, session = _limiter(cfg)
    headers = {"Authorization": f"Bearer {api_key}"}
    last_error = "no attempt made"
    for attempt in range(cfg.retry.max_attempts):
        if attempt:
            backoff = cfg.retry.base_backoff_ms / 1000.0 * (2 ** (attempt - 1))
            time.sleep(random.uniform(0, backoff))
        try:
            with semaphore:
                response = session.post(
                    cfg.endpoint, json=body, headers=headers, timeout=_REQUEST_TIMEOUT_S
                )
        except requests.RequestException as exc:
            last_error = f"transport: {exc}"
            continue
        if response.status_code == 200:
            try:
                return response.json()
            except ValueError as exc:
                raise BackendError(f"provider returned invalid JSON: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthError(f"credential rejected (HTTP {response.status_code}): {response.text}")
        if response.status_code == 429 or response.status_code >= 500:
            last_error = f"HTTP {response.status_code}: {response.text}"
            continue
        raise BackendError(f"HTTP {response.status_code}: {response.text}")
    raise TransportError(
        f"giving up after {cfg.retry.max_attempts} attempts; last error: {last_error}"
    )


def _raw_candidates(
    cfg: BackendConfig, prompt: InsertionPrompt, params: InferenceParams
) -> list[tuple[str, Optional[float]]]:
    if cfg.kind is BackendKind.MIRROR:
        parsed = parse_tag_prompt(prompt)
        return [(hole_text(mirror_transform(parsed.ctx, parsed.before)), None)]
    if cfg.kind is BackendKind.ECHO:
        parsed = parse_tag_prompt(prompt)
        return [(hole_text(parsed.before), None)]
    payload = remote_insertion_call(cfg, prompt, params)
    choices = payload.get("choices")
    if not isinstance(choices, list):
        raise BackendError(f"provider response has no choices array: {payload!r}")
    out: list[tuple[str, Optional[float]]] = []
    for choice in choices:
        text = choice.get("text")
        if not isinstance(text, str):
            raise BackendError(f"provider choice has no text field: {choice!r}")
        score = choice.get("score")
        out.append((text, float(score) if isinstance(score, (int, float)) else None))
    return out


def predict(
    cfg: BackendConfig, prompt: InsertionPrompt, params: InferenceParams = InferenceParams()
) -> list[Prediction]:
    """Ranked predictions for one insertion prompt.

    Candidates are parsed with parse_completion, deduplicated after
    whitespace normalization (best rank kept), capped at params.n, and
    re-ranked densely from 1. When every candidate carries a provider score,
    candidates are ordered by score (descending, stable) first.
    """
    candidates = _raw_candidates(cfg, prompt, params)
    if candidates and all(score is not None for _, score in candidates):
        candidates = sorted(candidates, key=lambda c: -c[1])  # type: ignore[operator]
        scored = True
    else:
        scored = False
    predictions: list[Prediction] = []
    seen: set[str] = set()
    for text, score in candidates:
        lines = parse_completion(text)
        key = " ".join("\n".join(lines).split())
        if key in seen:
            continue
        seen.add(key)
        predictions.append(
            Prediction(
                rank=len(predictions) + 1,
                text=tuple(lines),
                score=score if scored else None,
            )
        )
        if len(predictions) >= params.n:
            break
    return predictions
