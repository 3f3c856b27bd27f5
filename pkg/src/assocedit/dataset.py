"""Dataset pipeline: mine version pairs, assemble examples, filter, split.

Version-control access shells out to the external git command (plumbing
output parsed); alternatively a directory of unified-diff patch files can
be ingested, in which case version pairs are window-scoped reconstructions
from hunk context. Records serialize to JSONL with a fixed field order so
decode -> encode is byte-stable.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import logging
import re
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence

from .association import AssociationSpec, Strategy, spatial_associates, temporal_associates
from .diffing import GranularityConfig, SimpleKind, classify_simple, diff_versions, has_alien_insertion, resolve_parse_check
from .edits import Edit, EditProvenance, Example, LineSpan, Version
from .errors import BadRatios, PatchParseError, SchemaError, VcsUnavailable
from .rng import SplitMix64

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
PAIRS_SCHEMA_VERSION = "pairs/1"


@dataclass(frozen=True)
class VersionPair:
    """A (parent, child) file-version pair with its provenance."""

    parent: Version
    child: Version
    repo_id: str
    file_path: str
    revision_id: Optional[str] = None
    timestamp: Optional[int] = None


@dataclass(frozen=True)
class FilterRules:
    drop_simple: bool = True
    drop_alien: bool = True
    require_parse: bool = False
    parse_check: Optional[str] = None

    @property
    def active(self) -> bool:
        return self.drop_simple or self.drop_alien or self.require_parse


@dataclass(frozen=True)
class DatasetRecord:
    example: Example
    meta: dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Mining: git repositories
# ---------------------------------------------------------------------------


def _run_git(repo: Path, *args: str) -> bytes:
    try:
        proc = subprocess.run(
            ["git", "-C", str(repo), *args], capture_output=True, check=True
        )
    except FileNotFoundError as exc:
        raise VcsUnavailable("the git command is not available") from exc
    except subprocess.CalledProcessError as exc:
        raise VcsUnavailable(
            f"git {' '.join(args)} failed: {exc.stderr.decode('utf-8', 'replace').strip()}"
        ) from exc
    return proc.stdout


def _is_git_repo(path: Path) -> bool:
    try:
        subprocess.run(
            ["git", "-C", str(path), "rev-parse", "--git-dir"],
            capture_output=True,
            check=True,
        )
        return True
    except (FileNotFoundError, subprocess.CalledProcessError):
        return False


def _git_blob(repo: Path, revision: str, path: str) -> Optional[str]:
    """File content at revision:path, None when binary (NUL byte present)."""
    raw = _run_git(repo, "show", f"{revision}:{path}")
    if b"\x00" in raw:
        return None
    return raw.decode("utf-8", "replace")


def _mine_git(repo: Path, file_glob: str, repo_id: str) -> list[VersionPair]:
    log = _run_git(repo, "log", "--reverse", "--format=%H%x09%ct%x09%P").decode("utf-8")
    pairs: list[VersionPair] = []
    for entry in log.splitlines():
        sha, stamp, parents_field = entry.split("\t")
        parents = parents_field.split()
        if len(parents) != 1:
            continue  # root commits have no parent version; merges are skipped
        status_out = _run_git(
            repo, "diff-tree", "--no-commit-id", "--name-status", "-r", sha
        ).decode("utf-8")
        for row in status_out.splitlines():
            status, _, path = row.partition("\t")
            if status != "M" or not fnmatch.fnmatch(path, file_glob):
                continue
            parent_text = _git_blob(repo, parents[0], path)
            child_text = _git_blob(repo, sha, path)
            if parent_text is None or child_text is None:
                logger.info("skipping binary file %s at %s", path, sha)
                continue
            pairs.append(
                VersionPair(
                    parent=Version.deserialize(parent_text),
                    child=Version.deserialize(child_text),
                    repo_id=repo_id,
                    file_path=path,
                    revision_id=sha,
                    timestamp=int(stamp),
                )
            )
    pairs.sort(key=lambda p: (p.timestamp or 0, p.revision_id or "", p.file_path))
    return pairs


# ---------------------------------------------------------------------------
# Mining: unified-diff patch files
# ---------------------------------------------------------------------------

_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
_DEV_NULL = "/dev/null"


def _clean_patch_path(raw: str) -> str:
    path = raw.split("\t")[0].strip()
    for prefix in ("a/", "b/"):
        if path.startswith(prefix):
            return path[len(prefix) :]
    return path


def _parse_patch(path: Path, repo_id: str) -> list[VersionPair]:
    """Window-scoped version pairs, one per file section of the patch."""
    pairs: list[VersionPair] = []
    old_path: Optional[str] = None
    new_path: Optional[str] = None
    parent_lines: list[str] = []
    child_lines: list[str] = []
    saw_hunk = False
    old_left = new_left = 0

    def flush() -> None:
        nonlocal parent_lines, child_lines, saw_hunk
        if saw_hunk and old_path != _DEV_NULL and new_path != _DEV_NULL and new_path:
            pairs.append(
                VersionPair(
                    parent=Version(tuple(parent_lines)),
                    child=Version(tuple(child_lines)),
                    repo_id=repo_id,
                    file_path=new_path,
                    revision_id=path.stem,
                )
            )
        parent_lines, child_lines, saw_hunk = [], [], False

    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, 1):
            line = raw.rstrip("\n")
            in_hunk = old_left > 0 or new_left > 0
            if in_hunk:
                if line.startswith(" ") or line == "":
                    parent_lines.append(line[1:])
                    child_lines.append(line[1:])
                    old_left -= 1
                    new_left -= 1
                elif line.startswith("-"):
                    parent_lines.append(line[1:])
                    old_left -= 1
                elif line.startswith("+"):
                    child_lines.append(line[1:])
                    new_left -= 1
                elif line.startswith("\\"):
                    pass  # "\ No newline at end of file": irrelevant to windows
                else:
                    raise PatchParseError(
                        f"unexpected line inside hunk: {line!r}", str(path), lineno
                    )
                if old_left < 0 or new_left < 0:
                    raise PatchParseError("hunk overruns its header counts", str(path), lineno)
                continue
            if line.startswith("--- "):
                flush()
                old_path = _clean_patch_path(line[4:])
                new_path = None
            elif line.startswith("+++ "):
                new_path = _clean_patch_path(line[4:])
            elif line.startswith("@@"):
                match = _HUNK_RE.match(line)
                if not match or new_path is None:
                    raise PatchParseError(f"malformed hunk header: {line!r}", str(path), lineno)
                old_left = int(match.group(2) or "1")
                new_left = int(match.group(4) or "1")
                saw_hunk = True
            elif line.startswith(("diff ", "index ", "old mode", "new mode", "similarity", "rename ", "new file", "deleted file")) or line == "":
                continue
            else:
                raise PatchParseError(f"unrecognized patch line: {line!r}", str(path), lineno)
    if old_left or new_left:
        raise PatchParseError("patch ends mid-hunk", str(path))
    flush()
    return pairs


def mine_revisions(repo_path: str | Path, file_glob: str = "*", repo_id: Optional[str] = None) -> list[VersionPair]:
    """(parent, child) version pairs for every revision touching matching files.

    repo_path is either a git working tree or a directory of *.patch/*.diff
    files. Output order is deterministic: (timestamp, revision id, path).
    """
    root = Path(repo_path)
    rid = repo_id if repo_id is not None else root.name
    if _is_git_repo(root):
        return _mine_git(root, file_glob, rid)
    if root.is_dir():
        patches = sorted(p for p in root.iterdir() if p.suffix in (".patch", ".diff"))
        if patches:
            pairs: list[VersionPair] = []
            for patch in patches:
                pairs.extend(
                    p for p in _parse_patch(patch, rid) if fnmatch.fnmatch(p.file_path, file_glob)
                )
            pairs.sort(key=lambda p: (p.timestamp or 0, p.revision_id or "", p.file_path))
            return pairs
    raise VcsUnavailable(f"{root} is neither a git repository nor a directory of patch files")


# ---------------------------------------------------------------------------
# Example assembly and filtering
# ---------------------------------------------------------------------------


def example_id(repo: str, revision: Optional[str], path: str, span: LineSpan) -> str:
    digest = hashlib.sha256(
        f"{repo}|{revision or ''}|{path}|{span.start}|{span.end}".encode("utf-8")
    )
    return digest.hexdigest()[:16]


def build_examples(
    pairs: Sequence[VersionPair],
    gran: GranularityConfig = GranularityConfig(),
    assoc: AssociationSpec = AssociationSpec(),
) -> list[Example]:
    """One Example per mined edit, ctx per the spatial or temporal strategy.

    order_index runs through each file's lineage so temporal association
    works across revisions; ids are stable hashes of repo/revision/path/span.
    """
    if assoc.strategy not in (Strategy.SPATIAL, Strategy.TEMPORAL):
        raise ValueError(f"build_examples needs Spatial or Temporal, got {assoc.strategy}")
    examples: list[Example] = []
    lineage: dict[tuple[str, str], list[Edit]] = {}
    for pair in pairs:
        key = (pair.repo_id, pair.file_path)
        history = lineage.setdefault(key, [])
        prov = EditProvenance(
            repo_id=pair.repo_id,
            file_path=pair.file_path,
            revision_id=pair.revision_id,
            timestamp=pair.timestamp,
            order_index=len(history),
        )
        edits = diff_versions(pair.parent, pair.child, gran, prov)
        for edit in edits:
            if assoc.strategy is Strategy.SPATIAL:
                ctx = spatial_associates(edits, edit, assoc.radius_lines)[: assoc.max_edits]
            else:
                ctx = temporal_associates(history + edits, edit, assoc.max_edits)
            examples.append(
                Example(
                    id=example_id(pair.repo_id, pair.revision_id, pair.file_path, edit.span),
                    current=edit,
                    ctx_edits=tuple(ctx),
                )
            )
        history.extend(edits)
    return examples


def _passes_parse(ex: Example, check_name: Optional[str]) -> bool:
    check = resolve_parse_check(check_name)
    cur = ex.current
    return check(cur.prefix + cur.before + cur.suffix) and check(
        cur.prefix + cur.after + cur.suffix
    )


def filter_examples(
    examples: Sequence[Example], rules: FilterRules = FilterRules()
) -> tuple[list[Example], list[tuple[Example, str]]]:
    """Split into (kept, dropped-with-reason) per the filter rules.

    With every rule off this is the identity. Otherwise kept items gain the
    "filtered" tag, alien-insertion targets are tagged "alien_insertion"
    whether or not they are dropped, and each dropped item carries its
    reason both in the returned pair and as a tag.
    """
    if not rules.active:
        return list(examples), []
    kept: list[Example] = []
    dropped: list[tuple[Example, str]] = []
    for ex in examples:
        kind = classify_simple(ex.current)
        alien = has_alien_insertion(ex.current, ex.ctx_edits)
        tags = set(ex.tags)
        if alien:
            tags.add("alien_insertion")
        reason: Optional[str] = None
        if rules.drop_simple and kind is not SimpleKind.NOT_SIMPLE:
            reason = kind.value
        elif rules.drop_alien and alien:
            reason = "alien_insertion"
        elif rules.require_parse and not _passes_parse(ex, rules.parse_check):
            reason = "parse_failed"
        if reason is None:
            tags.add("filtered")
            kept.append(replace(ex, tags=frozenset(tags)))
        else:
            tags.add(reason)
            dropped.append((replace(ex, tags=frozenset(tags)), reason))
    return kept, dropped


def split_dataset(
    examples: Sequence[Example],
    ratios: Sequence[float],
    seed: int,
    *,
    group_by_repo: bool = False,
) -> dict[str, list[Example]]:
    """Disjoint, exhaustive train/eval/test partition, deterministic per seed.

    group_by_repo keeps each repo_id entirely inside one split.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negatives summing to 1, got {ratios!r}")
    n = len(examples)
    cut1 = int(n * ratios[0])
    cut2 = int(n * (ratios[0] + ratios[1]))
    rng = SplitMix64(seed)
    names = ("train", "eval", "test")
    out: dict[str, list[Example]] = {name: [] for name in names}
    if not group_by_repo:
        order = list(range(n))
        rng.shuffle(order)
        for pos, idx in enumerate(order):
            bucket = 0 if pos < cut1 else 1 if pos < cut2 else 2
            out[names[bucket]].append(examples[idx])
        return out
    by_repo: dict[str, list[Example]] = {}
    for ex in examples:
        by_repo.setdefault(ex.current.provenance.repo_id, []).append(ex)
    repos = sorted(by_repo)
    rng.shuffle(repos)
    targets = (cut1, cut2, n)
    bucket = 0
    count = 0
    for repo in repos:
        group = by_repo[repo]
        out[names[bucket]].extend(group)
        count += len(group)
        while bucket < 2 and count >= targets[bucket]:
            bucket += 1
    return out


# ---------------------------------------------------------------------------
# JSONL (de)serialization
# ---------------------------------------------------------------------------


def _edit_fields(edit: Edit) -> dict[str, Any]:
    return {
        "prefix": list(edit.prefix),
        "before": list(edit.before),
        "after": list(edit.after),
        "suffix": list(edit.suffix),
        "span": [edit.span.start, edit.span.end],
    }


def encode_record(record: DatasetRecord) -> dict[str, Any]:
    """Canonical field order; decode -> encode is byte-stable."""
    ex = record.example
    prov = ex.current.provenance
    obj: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "id": ex.id,
        "repo": prov.repo_id,
        "path": prov.file_path,
        "revision": prov.revision_id,
        "current": _edit_fields(ex.current),
        "ctx_edits": [
            {**_edit_fields(e), "order_index": e.provenance.order_index} for e in ex.ctx_edits
        ],
    }
    if ex.future_versions is not None:
        obj["futures"] = [list(v.lines) for v in ex.future_versions]
    obj["tags"] = sorted(ex.tags)
    obj["meta"] = dict(record.meta)
    return obj


def _want(obj: dict[str, Any], key: str, types: type | tuple[type, ...], line: Optional[int]) -> Any:
    if key not in obj:
        raise SchemaError(f"missing field {key!r}", line)
    value = obj[key]
    if not isinstance(value, types):
        raise SchemaError(f"field {key!r} has wrong type {type(value).__name__}", line)
    return value


def _want_lines(obj: dict[str, Any], key: str, line: Optional[int]) -> tuple[str, ...]:
    value = _want(obj, key, list, line)
    if not all(isinstance(item, str) for item in value):
        raise SchemaError(f"field {key!r} must be a list of strings", line)
    return tuple(value)


def _decode_edit(
    obj: dict[str, Any], prov: EditProvenance, line: Optional[int]
) -> Edit:
    span_raw = _want(obj, "span", list, line)
    if len(span_raw) != 2 or not all(isinstance(v, int) for v in span_raw):
        raise SchemaError("span must be two integers", line)
    try:
        return Edit(
            prefix=_want_lines(obj, "prefix", line),
            before=_want_lines(obj, "before", line),
            after=_want_lines(obj, "after", line),
            suffix=_want_lines(obj, "suffix", line),
            span=LineSpan(span_raw[0], span_raw[1]),
            provenance=prov,
        )
    except ValueError as exc:
        raise SchemaError(str(exc), line) from exc


def decode_record(obj: dict[str, Any], line: Optional[int] = None) -> DatasetRecord:
    version = _want(obj, "schema_version", str, line)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r}", line)
    repo = _want(obj, "repo", str, line)
    path = _want(obj, "path", str, line)
    revision = obj.get("revision")
    if revision is not None and not isinstance(revision, str):
        raise SchemaError("revision must be a string or null", line)
    ctx_raw = _want(obj, "ctx_edits", list, line)
    ctx = []
    for entry in ctx_raw:
        if not isinstance(entry, dict):
            raise SchemaError("ctx_edits entries must be objects", line)
        order = _want(entry, "order_index", int, line)
        ctx.append(
            _decode_edit(
                entry,
                EditProvenance(repo_id=repo, file_path=path, revision_id=revision, order_index=order),
                line,
            )
        )
    # the current edit comes after everything recorded as its context
    current_order = max((e.provenance.order_index for e in ctx), default=-1) + 1
    current = _decode_edit(
        _want(obj, "current", dict, line),
        EditProvenance(
            repo_id=repo, file_path=path, revision_id=revision, order_index=current_order
        ),
        line,
    )
    futures: Optional[tuple[Version, ...]] = None
    if "futures" in obj:
        futures_raw = _want(obj, "futures", list, line)
        decoded = []
        for lines in futures_raw:
            if not isinstance(lines, list) or not all(isinstance(s, str) for s in lines):
                raise SchemaError("futures entries must be lists of strings", line)
            decoded.append(Version(tuple(lines)))
        futures = tuple(decoded)
    tags_raw = _want(obj, "tags", list, line)
    if not all(isinstance(t, str) for t in tags_raw):
        raise SchemaError("tags must be strings", line)
    meta = _want(obj, "meta", dict, line)
    example = Example(
        id=_want(obj, "id", str, line),
        current=current,
        ctx_edits=tuple(ctx),
        future_versions=futures,
        tags=frozenset(tags_raw),
    )
    return DatasetRecord(example=example, meta=meta)


def write_jsonl(path: str | Path, records: Iterable[DatasetRecord]) -> int:
    """One record per line, UTF-8, LF. Streams; returns the record count."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(
                json.dumps(encode_record(record), ensure_ascii=False, separators=(",", ":"))
            )
            handle.write("\n")
            count += 1
    return count


def read_jsonl(path: str | Path) -> Iterator[DatasetRecord]:
    """Lazily yield records, surfacing the failing line number on bad input."""
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, 1):
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", lineno) from exc
            if not isinstance(obj, dict):
                raise SchemaError("record must be a JSON object", lineno)
            record = decode_record(obj, lineno)
            if record.example.id in seen:
                raise SchemaError(f"duplicate example id {record.example.id!r}", lineno)
            seen.add(record.example.id)
            yield record


# ---------------------------------------------------------------------------
# Version-pair JSONL (plumbing between `mine` and `build`)
# ---------------------------------------------------------------------------


def _encode_version(version: Version) -> dict[str, Any]:
    return {
        "lines": list(version.lines),
        "newline": version.newline.value,
        "trailing_newline": version.trailing_newline,
    }


def _decode_version(obj: dict[str, Any], line: Optional[int]) -> Version:
    from .edits import NewlineStyle

    lines = _want(obj, "lines", list, line)
    if not all(isinstance(s, str) for s in lines):
        raise SchemaError("version lines must be strings", line)
    return Version(
        tuple(lines),
        NewlineStyle(_want(obj, "newline", str, line)),
        _want(obj, "trailing_newline", bool, line),
    )


def write_pairs_jsonl(path: str | Path, pairs: Iterable[VersionPair]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for pair in pairs:
            obj = {
                "schema_version": PAIRS_SCHEMA_VERSION,
                "repo": pair.repo_id,
                "path": pair.file_path,
                "revision": pair.revision_id,
                "timestamp": pair.timestamp,
                "parent": _encode_version(pair.parent),
                "child": _encode_version(pair.child),
            }
            handle.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")
            count += 1
    return count


def read_pairs_jsonl(path: str | Path) -> Iterator[VersionPair]:
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, 1):
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", lineno) from exc
            if obj.get("schema_version") != PAIRS_SCHEMA_VERSION:
                raise SchemaError("not a version-pair record", lineno)
            yield VersionPair(
                parent=_decode_version(_want(obj, "parent", dict, lineno), lineno),
                child=_decode_version(_want(obj, "child", dict, lineno), lineno),
                repo_id=_want(obj, "repo", str, lineno),
                file_path=_want(obj, "path", str, lineno),
                revision_id=obj.get("revision"),
                timestamp=obj.get("timestamp"),
            )
