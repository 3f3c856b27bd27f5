"""Selection of associated edits for a target edit.

Strategies: spatial window, temporal recency, random sampling for the
relevance ablations, and single-edit noise injection. Every sampled choice
is driven by the pinned splitmix64 generator, so a fixed (pool, spec) pair
gives byte-identical output on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .diffing import SimpleKind, classify_simple
from .edits import Edit, LineSpan
from .errors import PoolExhausted
from .rng import SplitMix64, derive_seed


class Strategy(Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"
    RANDOM_SAME_REPO = "random-same-repo"
    RANDOM_OTHER_REPO = "random-other-repo"
    NONE = "none"


class PoolFilter(Enum):
    FILTERED_ONLY = "filtered"
    UNFILTERED = "unfiltered"


@dataclass(frozen=True)
class AssociationSpec:
    strategy: Strategy = Strategy.SPATIAL
    radius_lines: int = 10
    max_edits: int = 3
    pool_filter: PoolFilter = PoolFilter.FILTERED_ONLY
    seed: int = 0

    def __post_init__(self) -> None:
        if self.radius_lines < 0 or self.max_edits < 0:
            raise ValueError("radius_lines and max_edits must be >= 0")


def _widen(span: LineSpan) -> tuple[int, int]:
    # a pure-insertion point "touches" the line it precedes
    return (span.start, span.end) if span.end > span.start else (span.start, span.start + 1)


def spans_within_radius(a: LineSpan, b: LineSpan, radius: int) -> bool:
    """Symmetric window test: the spans come within `radius` lines of each other."""
    a_start, a_end = _widen(a)
    b_start, b_end = _widen(b)
    return a_start < b_end + radius and a_end > b_start - radius


def spatial_associates(
    all_edits_in_revision: Sequence[Edit], target: Edit, radius: int
) -> list[Edit]:
    """Edits (excluding the target) whose span intersects the target's
    [start - radius, end + radius) window, in document order."""
    hits = [
        e
        for e in all_edits_in_revision
        if e != target and spans_within_radius(e.span, target.span, radius)
    ]
    hits.sort(key=lambda e: (e.span.start, e.span.end, e.provenance.order_index))
    return hits


def temporal_associates(history: Sequence[Edit], target: Edit, k: int) -> list[Edit]:
    """The k most recent edits strictly before the target, oldest first."""
    if k <= 0:
        return []
    earlier = sorted(
        (e for e in history if e != target and e.provenance.order_index < target.provenance.order_index),
        key=lambda e: e.provenance.order_index,
    )
    return earlier[-k:]


def scope_pool(
    pool: Sequence[Edit], spec: AssociationSpec, target_repo_id: Optional[str]
) -> list[Edit]:
    """Pool restricted per spec: repo membership and simple-edit filtering."""
    scoped = list(pool)
    if spec.pool_filter is PoolFilter.FILTERED_ONLY:
        scoped = [e for e in scoped if classify_simple(e) is SimpleKind.NOT_SIMPLE]
    if spec.strategy is Strategy.RANDOM_SAME_REPO:
        if target_repo_id is None:
            raise ValueError("RandomSameRepo sampling needs target_repo_id")
        scoped = [e for e in scoped if e.provenance.repo_id == target_repo_id]
    elif spec.strategy is Strategy.RANDOM_OTHER_REPO:
        if target_repo_id is None:
            raise ValueError("RandomOtherRepo sampling needs target_repo_id")
        scoped = [e for e in scoped if e.provenance.repo_id != target_repo_id]
    return scoped


def sample_random_edits(
    pool: Sequence[Edit],
    n: int,
    spec: AssociationSpec,
    target_repo_id: Optional[str] = None,
    target: Optional[Edit] = None,
) -> list[Edit]:
    """n distinct edits drawn uniformly from the pool after scoping.

    Scope: repo membership per spec.strategy (relative to target_repo_id,
    or to target's repo when only `target` is given) and simple-edit
    filtering per spec.pool_filter. The target itself is never sampled.
    Deterministic per seed.
    """
    if target_repo_id is None and target is not None:
        target_repo_id = target.provenance.repo_id
    candidates = pool if target is None else [e for e in pool if e != target]
    scoped = scope_pool(candidates, spec, target_repo_id)
    if n > len(scoped):
        raise PoolExhausted(f"need {n} edits, scoped pool has {len(scoped)}")
    return SplitMix64(spec.seed).sample(scoped, n)


def _same_example(a: Edit, b: Edit) -> bool:
    pa, pb = a.provenance, b.provenance
    return (pa.repo_id, pa.file_path, pa.revision_id) == (pb.repo_id, pb.file_path, pb.revision_id)


def inject_noise(
    assoc: Sequence[Edit],
    pool: Sequence[Edit],
    spec: AssociationSpec,
    target: Optional[Edit] = None,
) -> list[Edit]:
    """assoc plus exactly one unrelated pool edit appended last.

    Unrelated: not already in assoc, and (when the target is given) neither
    the target itself nor an edit from the target's own repo/path/revision.
    """
    candidates = [e for e in pool if e not in assoc]
    if target is not None:
        candidates = [e for e in candidates if e != target and not _same_example(e, target)]
    if spec.pool_filter is PoolFilter.FILTERED_ONLY:
        candidates = [e for e in candidates if classify_simple(e) is SimpleKind.NOT_SIMPLE]
    if not candidates:
        raise PoolExhausted("no unrelated edits left to inject")
    rng = SplitMix64(derive_seed(spec.seed, "noise-injection"))
    return list(assoc) + rng.sample(candidates, 1)
