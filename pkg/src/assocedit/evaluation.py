"""Exact-match metrics, Top-k aggregation, and ablation drivers.

"Syntactic match modulo whitespaces" is implemented as whitespace-run
normalization (every run of space/tab/CR/LF becomes one space, ends
trimmed), not parser-based equivalence. The any-of-K-futures protocol
compares the applied edit window (prefix ++ prediction ++ suffix) against
each stored future version, so futures must be stored at window scope.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Optional, Sequence

from .association import (
    AssociationSpec,
    PoolFilter,
    Strategy,
    inject_noise,
    sample_random_edits,
    scope_pool,
    spatial_associates,
    temporal_associates,
)
from .backends import BackendConfig, InferenceParams, predict
from .edits import Edit, Example, Prediction, Version
from .errors import MissingPredictions
from .prompting import TokenBudget, build_no_edit_prompt, build_tag_prompt
from .rng import PRNG_ID, derive_seed


class Protocol(Enum):
    NORMALIZED_EXACT = "exact"
    ANY_OF_FUTURE_VERSIONS = "futures"


@dataclass(frozen=True)
class EvalConfig:
    protocol: Protocol = Protocol.NORMALIZED_EXACT
    k_futures: int = 50
    topk: int = 5

    def __post_init__(self) -> None:
        if self.k_futures < 1 or self.topk < 1:
            raise ValueError("k_futures and topk must be >= 1")


@dataclass(frozen=True)
class ItemResult:
    example_id: str
    verdicts: tuple[bool, ...]
    first_match_rank: Optional[int]
    status: str = "ok"  # ok | missing


@dataclass(frozen=True)
class EvalReport:
    per_item: tuple[ItemResult, ...]
    top1: float
    topk: float
    spread: float
    config_echo: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "top1": self.top1,
            "topk": self.topk,
            "spread": self.spread,
            "per_item": [
                {
                    "example_id": item.example_id,
                    "verdicts": list(item.verdicts),
                    "first_match_rank": item.first_match_rank,
                    "status": item.status,
                }
                for item in self.per_item
            ],
            "config_echo": dict(self.config_echo),
        }


def normalize_ws(text: str) -> str:
    """Collapse every whitespace run to one space and trim the ends. Idempotent."""
    return " ".join(text.split())


def exact_match(pred: Sequence[str], truth: Sequence[str]) -> bool:
    """Equality of the joined line lists after whitespace normalization."""
    return normalize_ws("\n".join(pred)) == normalize_ws("\n".join(truth))


def match_any_future(edit_applied: Version, futures: Sequence[Version], k: int) -> bool:
    """True iff the applied version normalize-equals one of the first k futures."""
    applied = normalize_ws("\n".join(edit_applied.lines))
    return any(applied == normalize_ws("\n".join(f.lines)) for f in futures[:k])


def _matches(ex: Example, prediction: Prediction, cfg: EvalConfig) -> bool:
    if cfg.protocol is Protocol.NORMALIZED_EXACT:
        return exact_match(prediction.text, ex.current.after)
    applied = Version(ex.current.prefix + prediction.text + ex.current.suffix)
    return match_any_future(applied, ex.future_versions or (), cfg.k_futures)


def _pct(count: int, total: int) -> float:
    return round(100.0 * count / total, 2) if total else 0.0


def evaluate(
    dataset: Sequence[Example],
    preds: Mapping[str, Sequence[Prediction]],
    cfg: EvalConfig = EvalConfig(),
    *,
    strict: bool = False,
    exclude_missing: bool = False,
    config_echo: Optional[Mapping[str, Any]] = None,
) -> EvalReport:
    """Per-item verdicts plus Top-1/Top-k aggregates and their spread.

    Examples without a prediction set raise MissingPredictions when strict,
    otherwise they count as non-matches; exclude_missing removes them from
    the denominator instead. Percentages are rounded to two decimals.
    """
    items: list[ItemResult] = []
    for ex in dataset:
        ranked = preds.get(ex.id)
        if ranked is None:
            if strict:
                raise MissingPredictions(f"no predictions for example {ex.id!r}")
            items.append(ItemResult(ex.id, (), None, status="missing"))
            continue
        ordered = sorted(ranked, key=lambda p: p.rank)
        verdicts = tuple(_matches(ex, p, cfg) for p in ordered)
        first = next((p.rank for p, v in zip(ordered, verdicts) if v), None)
        items.append(ItemResult(ex.id, verdicts, first))
    scored = [it for it in items if it.status == "ok"] if exclude_missing else items
    total = len(scored)
    top1_hits = sum(1 for it in scored if it.first_match_rank == 1)
    topk_hits = sum(
        1 for it in scored if it.first_match_rank is not None and it.first_match_rank <= cfg.topk
    )
    top1 = _pct(top1_hits, total)
    topk = _pct(topk_hits, total)
    echo = {
        "protocol": cfg.protocol.value,
        "k_futures": cfg.k_futures,
        "topk": cfg.topk,
        "strict": strict,
        "exclude_missing": exclude_missing,
    }
    if config_echo:
        echo.update(config_echo)
    return EvalReport(
        per_item=tuple(items),
        top1=top1,
        topk=topk,
        spread=round(topk - top1, 2),
        config_echo=echo,
    )


def _default_pool(dataset: Sequence[Example]) -> list[Edit]:
    pool = [ex.current for ex in dataset]
    for ex in dataset:
        pool.extend(ex.ctx_edits)
    return pool


def _rebuild_ctx(
    ex: Example, spec: AssociationSpec, pool: Sequence[Edit], noise: bool
) -> tuple[Edit, ...]:
    if spec.strategy is Strategy.NONE:
        ctx: list[Edit] = []
    elif spec.strategy is Strategy.SPATIAL:
        ctx = spatial_associates(ex.ctx_edits, ex.current, spec.radius_lines)[: spec.max_edits]
    elif spec.strategy is Strategy.TEMPORAL:
        ctx = temporal_associates(ex.ctx_edits, ex.current, spec.max_edits)
    else:
        candidates = [e for e in pool if e != ex.current and e not in ex.ctx_edits]
        repo = ex.current.provenance.repo_id
        available = len(scope_pool(candidates, spec, repo))
        ctx = sample_random_edits(
            candidates, min(spec.max_edits, available), spec, target=ex.current
        )
    if noise:
        ctx = inject_noise(
            ctx,
            pool,
            replace(spec, pool_filter=PoolFilter.UNFILTERED),
            target=ex.current,
        )
    return tuple(ctx)


def run_ablation(
    dataset: Sequence[Example],
    spec: AssociationSpec,
    backend: BackendConfig,
    params: InferenceParams = InferenceParams(),
    cfg: EvalConfig = EvalConfig(),
    *,
    noise: bool = False,
    budget: TokenBudget = TokenBudget(),
    pool: Optional[Sequence[Edit]] = None,
    jobs: int = 1,
) -> EvalReport:
    """Rebuild every example's associated edits per `spec`, predict, evaluate.

    Strategy None uses the no-edit prompt; every other strategy uses the tag
    prompt. Random strategies draw from `pool` (default: all edits in the
    dataset) with a per-example sub-seed, so reports are reproducible
    regardless of dataset order or parallelism.
    """
    pool = list(pool) if pool is not None else _default_pool(dataset)

    def _one(ex: Example) -> Sequence[Prediction]:
        per_ex = replace(spec, seed=derive_seed(spec.seed, ex.id))
        ctx = _rebuild_ctx(ex, per_ex, pool, noise)
        rebuilt = replace(ex, ctx_edits=ctx)
        if spec.strategy is Strategy.NONE:
            prompt = build_no_edit_prompt(rebuilt, budget)
        else:
            prompt = build_tag_prompt(rebuilt, budget)
        return predict(backend, prompt, params)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            results = list(pool_exec.map(_one, dataset))
    else:
        results = [_one(ex) for ex in dataset]
    preds = {ex.id: ranked for ex, ranked in zip(dataset, results)}
    echo = {
        "association": {
            "strategy": spec.strategy.value,
            "radius_lines": spec.radius_lines,
            "max_edits": spec.max_edits,
            "pool_filter": spec.pool_filter.value,
            "seed": spec.seed,
        },
        "noise": noise,
        "inference": {
            "n": params.n,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "stop": params.stop,
            "beam_width": params.beam_width,
        },
        "backend": backend.kind.value,
        "model_name": backend.model_name,
        "budget": {"max_tokens": budget.max_tokens, "counter": budget.counter},
        "prng": PRNG_ID,
    }
    return evaluate(dataset, preds, cfg, config_echo=echo)
