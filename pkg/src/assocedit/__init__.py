"""assocedit: predict code edits by conditioning on associated edits.

Library + CLI covering the full pipeline: mine edits from version
histories, pick associated edits, build infilling prompts and fine-tuning
records, query prediction backends, and score ranked predictions with
exact-match protocols and ablations.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .association import AssociationSpec, PoolFilter, Strategy
from .backends import BackendConfig, BackendKind, InferenceParams, RetryPolicy, mirror_transform, predict
from .dataset import (
    DatasetRecord,
    FilterRules,
    VersionPair,
    build_examples,
    filter_examples,
    mine_revisions,
    read_jsonl,
    split_dataset,
    write_jsonl,
)
from .diffing import (
    GranularityConfig,
    SimpleKind,
    classify_simple,
    diff_versions,
    has_alien_insertion,
    partition_hunk,
    tokenize,
)
from .edits import (
    Edit,
    EditProvenance,
    Example,
    LineSpan,
    NewlineStyle,
    Prediction,
    Version,
    apply_edit,
    apply_edits,
    edited_region,
)
from .errors import (
    AuthError,
    BackendError,
    BadRatios,
    BudgetImpossible,
    CounterUnavailable,
    DataError,
    MissingPredictions,
    PatchParseError,
    PoolExhausted,
    RemoteFailure,
    SchemaError,
    SpanMismatch,
    ToolkitError,
    TransportError,
    VcsUnavailable,
)
from .evaluation import (
    EvalConfig,
    EvalReport,
    Protocol,
    evaluate,
    exact_match,
    match_any_future,
    normalize_ws,
    run_ablation,
)
from .prompting import (
    FinetuneRecord,
    InsertionPrompt,
    TokenBudget,
    build_comment_prompt,
    build_finetune_record,
    build_no_edit_prompt,
    build_tag_prompt,
    count_tokens,
    parse_completion,
    special_tokens,
)
from .rng import PRNG_ID, SplitMix64, derive_seed

from .association import inject_noise, sample_random_edits, spatial_associates, temporal_associates
