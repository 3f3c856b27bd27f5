"""Command-line front end wiring the pipeline stages.

One subcommand per stage (mine, build, filter, split, prompt,
finetune-prep, predict, eval, ablate) so each experiment is a short shell
pipeline. Exit codes: 0 success, 1 usage error, 2 data error, 3
backend/transport error. Diagnostics go to stderr; artifacts only to the
paths given on the command line, each accompanied by a run manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from . import __version__
from .association import AssociationSpec, PoolFilter, Strategy
from .backends import BackendConfig, BackendKind, InferenceParams, RetryPolicy, predict
from .dataset import (
    DatasetRecord,
    FilterRules,
    build_examples,
    filter_examples,
    mine_revisions,
    read_jsonl,
    read_pairs_jsonl,
    split_dataset,
    write_jsonl,
    write_pairs_jsonl,
)
from .diffing import GranularityConfig
from .edits import Prediction
from .errors import DataError, RemoteFailure, SchemaError, ToolkitError
from .evaluation import EvalConfig, Protocol, evaluate, run_ablation
from .prompting import (
    DEFAULT_SENTINEL,
    TokenBudget,
    build_comment_prompt,
    build_finetune_record,
    build_no_edit_prompt,
    build_tag_prompt,
)
from .rng import PRNG_ID


class UsageError(ToolkitError):
    """Bad command line; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _load_config(path: str) -> dict[str, Any]:
    data = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib  # type: ignore[no-redef]
        return tomllib.loads(data.decode("utf-8"))
    return json.loads(data)


class _Resolver:
    """Flags override config-file values, which override hard defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = _load_config(args.config) if getattr(args, "config", None) else {}
        self.resolved: dict[str, Any] = {}

    def get(self, name: str, default: Any = None) -> Any:
        value = getattr(self.args, name, None)
        if value is None:
            value = self.config.get(name, self.config.get(name.replace("_", "-"), default))
        self.resolved[name] = value
        return value


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifests(
    outputs: Sequence[Path],
    inputs: Sequence[Path],
    argv: Sequence[str],
    resolved: dict[str, Any],
    started: float,
) -> None:
    manifest = {
        "tool_version": __version__,
        "prng": PRNG_ID,
        "command": list(argv),
        "config": resolved,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    for out in outputs:
        Path(str(out) + ".manifest.json").write_text(text, encoding="utf-8")


def _read_records(path: str) -> list[DatasetRecord]:
    return list(read_jsonl(path))


def _write_json_lines(path: Path, rows: Sequence[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")) + "\n")


def _default_jobs(resolver: _Resolver, max_concurrency: int) -> int:
    jobs = resolver.get("jobs")
    if jobs is None:
        jobs = min(os.cpu_count() or 1, max_concurrency)
    return max(1, int(jobs))


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_mine(args: argparse.Namespace, argv: Sequence[str]) -> None:
    started = time.perf_counter()
    r = _Resolver(args)
    glob = r.get("glob", "*")
    repo_id = r.get("repo_id")
    pairs = mine_revisions(args.repo, glob, repo_id=repo_id)
    out = Path(args.out)
    count = write_pairs_jsonl(out, pairs)
    print(f"mined {count} version pairs from {args.repo}", file=sys.stderr)
    _write_manifests([out], [], argv, r.resolved, started)


def _assoc_spec(r: _Resolver, default_strategy: str) -> AssociationSpec:
    return AssociationSpec(
        strategy=Strategy(r.get("strategy", default_strategy)),
        radius_lines=int(r.get("radius", 10)),
        max_edits=int(r.get("max_edits", 3)),
        pool_filter=PoolFilter(r.get("pool_filter", "filtered")),
        seed=int(r.get("seed", 0)),
    )


def _cmd_build(args: argparse.Namespace, argv: Sequence[str]) -> None:
    started = time.perf_counter()
    r = _Resolver(args)
    assoc = _assoc_spec(r, "spatial")
    gran = GranularityConfig(
        merge_gap=int(r.get("merge_gap", 2)),
        context_lines=int(r.get("context_lines", 10)),
    )
    pairs = list(read_pairs_jsonl(args.pairs))
    examples = build_examples(pairs, gran, assoc)
    meta = {
        "strategy": assoc.strategy.value,
        "radius": assoc.radius_lines,
        "max_edits": assoc.max_edits,
        "merge_gap": gran.merge_gap,
        "context_lines": gran.context_lines,
        "seed": assoc.seed,
        "prng": PRNG_ID,
    }
    out = Path(args.out)
    count = write_jsonl(out, (DatasetRecord(ex, dict(meta)) for ex in examples))
    print(f"built {count} examples from {len(pairs)} pairs", file=sys.stderr)
    _write_manifests([out], [Path(args.pairs)], argv, r.resolved, started)


def _cmd_filter(args: argparse.Namespace, argv: Sequence[str]) -> None:
    started = time.perf_counter()
    r = _Resolver(args)
    rules = FilterRules(
        drop_simple=bool(r.get("drop_simple", True)),
        drop_alien=bool(r.get("drop_alien", True)),
        require_parse=bool(r.get("require_parse", False)),
    )
    records = _read_records(args.input)
    meta_by_id = {rec.example.id: rec.meta for rec in records}
    kept, dropped = filter_examples([rec.example for rec in records], rules)
    out = Path(args.out)
    write_jsonl(out, (DatasetRecord(ex, meta_by_id[ex.id]) for ex in kept))
    outputs = [out]
    if args.dropped:
        dropped_path = Path(args.dropped)
        write_jsonl(
            dropped_path,
            (
                DatasetRecord(ex, {**meta_by_id[ex.id], "dropped_reason": reason})
                for ex, reason in dropped
            ),
        )
        outputs.append(dropped_path)
    print(f"kept {len(kept)}, dropped {len(dropped)}", file=sys.stderr)
    _write_manifests(outputs, [Path(args.input)], argv, r.resolved, started)


def _cmd_split(args: argparse.Namespace, argv: Sequence[str]) -> None:
    started = time.perf_counter()
    r = _Resolver(args)
    ratios_raw = r.get("ratios", "0.8,0.1,0.1")
    try:
        ratios = [float(part) for part in str(ratios_raw).split(",")]
    except ValueError as exc:
        raise UsageError(f"--ratios must be three comma-separated numbers: {exc}")
    seed = int(r.get("seed", 0))
    group = bool(r.get("group_by_repo", False))
    records = _read_records(args.input)
    by_id = {rec.example.id: rec for rec in records}
    splits = split_dataset([rec.example for rec in records], ratios, seed, group_by_repo=group)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name in ("train", "eval", "test"):
        out = out_dir / f"{name}.jsonl"
        write_jsonl(out, (by_id[ex.id] for ex in splits[name]))
        outputs.append(out)
    sizes = {name: len(splits[name]) for name in splits}
    print(f"split sizes: {sizes}", file=sys.stderr)
    _write_manifests(outputs, [Path(args.input)], argv, r.resolved, started)


def _cmd_prompt(args: argparse.Namespace, argv: Sequence[str]) -> None:
    started = time.perf_counter()
    r = _Resolver(args)
    style = r.get("style", "tag")
    budget = TokenBudget(
        max_tokens=int(r.get("max_tokens", 1024)), counter=r.get("counter", "default")
    )
    rows = []
    for rec in read_jsonl(args.input):
        if style == "tag":
            split = build_tag_prompt(rec.example, budget)
            rows.append(
                {"id": rec.example.id, "style": style, "prompt": split.prompt, "suffix": split.suffix}
            )
        elif style == "no-edit":
            split = build_no_edit_prompt(rec.example, budget)
            rows.append(
                {"id": rec.example.id, "style": style, "prompt": split.prompt, "suffix": split.suffix}
            )
        else:
            text = build_comment_prompt(rec.example, budget)
            rows.append({"id": rec.example.id, "style": style, "text": text})
    out = Path(args.out)
    _write_json_lines(out, rows)
    print(f"wrote {len(rows)} {style} prompts", file=sys.stderr)
    _write_manifests([out], [Path(args.input)], argv, r.resolved, started)


def _cmd_finetune_prep(args: argparse.Namespace, argv: Sequence[str]) -> None:
    started = time.perf_counter()
    r = _Resolver(args)
    sentinel = r.get("sentinel", DEFAULT_SENTINEL)
    include_ctx = not bool(r.get("no_ctx", False))
    max_tokens = r.get("max_tokens")
    budget = TokenBudget(max_tokens=int(max_tokens)) if max_tokens is not None else None
    rows = []
    for rec in read_jsonl(args.input):
        record = build_finetune_record(rec.example, sentinel, include_ctx, budget)
        rows.append(
            {
                "id": rec.example.id,
                "input": record.input,
                "target": record.target,
                "sentinel": sentinel,
            }
        )
    out = Path(args.out)
    _write_json_lines(out, rows)
    print(f"wrote {len(rows)} fine-tune records", file=sys.stderr)
    _write_manifests([out], [Path(args.input)], argv, r.resolved, started)


def _backend_config(r: _Resolver) -> BackendConfig:
    kind = BackendKind(r.get("backend", "mirror"))
    return BackendConfig(
        kind=kind,
        endpoint=r.get("endpoint"),
        model_name=r.get("model"),
        max_concurrency=int(r.get("max_concurrency", 4)),
        retry=RetryPolicy(
            max_attempts=int(r.get("retry_attempts", 3)),
            base_backoff_ms=int(r.get("retry_backoff_ms", 100)),
        ),
    )


def _inference_params(r: _Resolver) -> InferenceParams:
    beam = r.get("beam_width", 5)
    return InferenceParams(
        n=int(r.get("n", 5)),
        temperature=float(r.get("temperature", 0.1)),
        max_tokens=int(r.get("max_tokens", 256)),
        stop=r.get("stop", "</After>"),
        beam_width=int(beam) if beam is not None else None,
    )


def _cmd_predict(args: argparse.Namespace, argv: Sequence[str]) -> None:
    started = time.perf_counter()
    r = _Resolver(args)
    backend = _backend_config(r)
    params = _inference_params(r)
    style = r.get("style", "tag")
    budget = TokenBudget(max_tokens=int(r.get("budget_tokens", 1024)))
    jobs = _default_jobs(r, backend.max_concurrency)
    records = _read_records(args.input)

    def one(rec: DatasetRecord) -> dict[str, Any]:
        builder = build_no_edit_prompt if style == "no-edit" else build_tag_prompt
        ranked = predict(backend, builder(rec.example, budget), params)
        return {
            "id": rec.example.id,
            "predictions": [
                {"rank": p.rank, "text": list(p.text), "score": p.score} for p in ranked
            ],
        }

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, records))
    else:
        rows = [one(rec) for rec in records]
    out = Path(args.out)
    _write_json_lines(out, rows)
    print(f"predicted {len(rows)} examples with {backend.kind.value} backend", file=sys.stderr)
    _write_manifests([out], [Path(args.input)], argv, r.resolved, started)


def _load_predictions(path: str) -> dict[str, list[Prediction]]:
    preds: dict[str, list[Prediction]] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, 1):
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", lineno) from exc
            try:
                preds[obj["id"]] = [
                    Prediction(rank=p["rank"], text=tuple(p["text"]), score=p.get("score"))
                    for p in obj["predictions"]
                ]
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"bad prediction record: {exc}", lineno) from exc
    return preds


def _eval_config(r: _Resolver) -> EvalConfig:
    protocol = Protocol(r.get("protocol", "exact"))
    return EvalConfig(
        protocol=protocol,
        k_futures=int(r.get("k_futures", 50)),
        topk=int(r.get("topk", 5)),
    )


def _cmd_eval(args: argparse.Namespace, argv: Sequence[str]) -> None:
    started = time.perf_counter()
    r = _Resolver(args)
    cfg = _eval_config(r)
    records = _read_records(args.input)
    preds = _load_predictions(args.preds)
    report = evaluate(
        [rec.example for rec in records],
        preds,
        cfg,
        strict=bool(r.get("strict", False)),
        exclude_missing=bool(r.get("exclude_missing", False)),
        config_echo={"prng": PRNG_ID},
    )
    out = Path(args.out)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"top1={report.top1} top{cfg.topk}={report.topk} spread={report.spread}", file=sys.stderr)
    _write_manifests([out], [Path(args.input), Path(args.preds)], argv, r.resolved, started)


def _cmd_ablate(args: argparse.Namespace, argv: Sequence[str]) -> None:
    started = time.perf_counter()
    r = _Resolver(args)
    mode = r.get("mode", "spatial")
    noise = mode == "noise"
    strategy = "spatial" if noise else mode
    spec = AssociationSpec(
        strategy=Strategy(strategy),
        radius_lines=int(r.get("radius", 10)),
        max_edits=int(r.get("max_edits", 3)),
        pool_filter=PoolFilter(r.get("pool_filter", "filtered")),
        seed=int(r.get("seed", 0)),
    )
    backend = _backend_config(r)
    params = _inference_params(r)
    cfg = _eval_config(r)
    jobs = _default_jobs(r, backend.max_concurrency)
    records = _read_records(args.input)
    report = run_ablation(
        [rec.example for rec in records],
        spec,
        backend,
        params,
        cfg,
        noise=noise,
        budget=TokenBudget(max_tokens=int(r.get("budget_tokens", 1024))),
        jobs=jobs,
    )
    out = Path(args.out)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(
        f"mode={mode} top1={report.top1} top{cfg.topk}={report.topk} spread={report.spread}",
        file=sys.stderr,
    )
    _write_manifests([out], [Path(args.input)], argv, r.resolved, started)


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="TOML or JSON config file; flags override its values")


def build_parser() -> _Parser:
    parser = _Parser(prog="assocedit", description=__doc__)
    parser.add_argument(
        "--version", action="version", version=f"assocedit {__version__} (prng {PRNG_ID})"
    )
    subs = parser.add_subparsers(dest="command", metavar="COMMAND")

    mine = subs.add_parser("mine", help="extract version pairs from a repo or patch directory")
    mine.add_argument("--repo", required=True, help="git working tree or patch directory")
    mine.add_argument("--glob", help="file glob (default *)")
    mine.add_argument("--repo-id", dest="repo_id", help="repository id recorded in provenance")
    mine.add_argument("--out", required=True, help="output pairs JSONL")
    _add_common(mine)
    mine.set_defaults(func=_cmd_mine)

    build = subs.add_parser("build", help="assemble examples with associated edits")
    build.add_argument("--pairs", required=True, help="pairs JSONL from `mine`")
    build.add_argument("--out", required=True, help="output dataset JSONL")
    build.add_argument("--strategy", choices=["spatial", "temporal"])
    build.add_argument("--radius", type=int, help="spatial window in lines (default 10)")
    build.add_argument("--max-edits", dest="max_edits", type=int, help="ctx edit cap (default 3)")
    build.add_argument("--merge-gap", dest="merge_gap", type=int, help="hunk merge gap (default 2)")
    build.add_argument(
        "--context-lines", dest="context_lines", type=int, help="prefix/suffix cap (default 10)"
    )
    build.add_argument("--seed", type=int)
    _add_common(build)
    build.set_defaults(func=_cmd_build)

    filt = subs.add_parser("filter", help="apply the simple/alien/parse filter rules")
    filt.add_argument("--in", dest="input", required=True)
    filt.add_argument("--out", required=True)
    filt.add_argument("--dropped", help="optional JSONL for dropped examples")
    filt.add_argument("--drop-simple", dest="drop_simple", action=argparse.BooleanOptionalAction)
    filt.add_argument("--drop-alien", dest="drop_alien", action=argparse.BooleanOptionalAction)
    filt.add_argument(
        "--require-parse", dest="require_parse", action=argparse.BooleanOptionalAction
    )
    _add_common(filt)
    filt.set_defaults(func=_cmd_filter)

    split = subs.add_parser("split", help="partition a dataset into train/eval/test")
    split.add_argument("--in", dest="input", required=True)
    split.add_argument("--out-dir", dest="out_dir", required=True)
    split.add_argument("--ratios", help="three comma-separated ratios (default 0.8,0.1,0.1)")
    split.add_argument("--seed", type=int)
    split.add_argument(
        "--group-by-repo", dest="group_by_repo", action=argparse.BooleanOptionalAction
    )
    _add_common(split)
    split.set_defaults(func=_cmd_split)

    prompt = subs.add_parser("prompt", help="serialize prompts for a dataset")
    prompt.add_argument("--in", dest="input", required=True)
    prompt.add_argument("--out", required=True)
    prompt.add_argument("--style", choices=["tag", "comment", "no-edit"])
    prompt.add_argument("--max-tokens", dest="max_tokens", type=int, help="budget (default 1024)")
    prompt.add_argument("--counter", help="token counter id (default | cmd:<command>)")
    _add_common(prompt)
    prompt.set_defaults(func=_cmd_prompt)

    ft = subs.add_parser("finetune-prep", help="emit masked-span fine-tuning records")
    ft.add_argument("--in", dest="input", required=True)
    ft.add_argument("--out", required=True)
    ft.add_argument("--sentinel", help=f"mask marker (default {DEFAULT_SENTINEL})")
    ft.add_argument("--no-ctx", dest="no_ctx", action=argparse.BooleanOptionalAction)
    ft.add_argument("--max-tokens", dest="max_tokens", type=int, help="optional budget")
    _add_common(ft)
    ft.set_defaults(func=_cmd_finetune_prep)

    pred = subs.add_parser("predict", help="run a backend over a dataset")
    pred.add_argument("--in", dest="input", required=True)
    pred.add_argument("--out", required=True)
    pred.add_argument("--backend", choices=["mirror", "echo", "remote"])
    pred.add_argument("--endpoint", help="remote insertion endpoint URL")
    pred.add_argument("--model", help="remote model name")
    pred.add_argument("--style", choices=["tag", "no-edit"])
    pred.add_argument("--n", type=int, help="candidates per example (default 5)")
    pred.add_argument("--temperature", type=float, help="sampling temperature (default 0.1)")
    pred.add_argument("--max-tokens", dest="max_tokens", type=int, help="generation cap (default 256)")
    pred.add_argument("--stop", help="stop marker (default </After>)")
    pred.add_argument("--beam-width", dest="beam_width", type=int)
    pred.add_argument("--budget-tokens", dest="budget_tokens", type=int, help="prompt budget (default 1024)")
    pred.add_argument("--max-concurrency", dest="max_concurrency", type=int)
    pred.add_argument("--retry-attempts", dest="retry_attempts", type=int)
    pred.add_argument("--retry-backoff-ms", dest="retry_backoff_ms", type=int)
    pred.add_argument("--jobs", type=int, help="parallel prompt fan-out (default cpu, capped)")
    _add_common(pred)
    pred.set_defaults(func=_cmd_predict)

    ev = subs.add_parser("eval", help="score predictions against a dataset")
    ev.add_argument("--in", dest="input", required=True)
    ev.add_argument("--preds", required=True, help="predictions JSONL from `predict`")
    ev.add_argument("--out", required=True, help="output report JSON")
    ev.add_argument("--protocol", choices=["exact", "futures"])
    ev.add_argument("--topk", type=int, help="top-k cutoff (default 5)")
    ev.add_argument("--k-futures", dest="k_futures", type=int, help="future window (default 50)")
    ev.add_argument("--strict", action=argparse.BooleanOptionalAction)
    ev.add_argument(
        "--exclude-missing", dest="exclude_missing", action=argparse.BooleanOptionalAction
    )
    _add_common(ev)
    ev.set_defaults(func=_cmd_eval)

    abl = subs.add_parser("ablate", help="rebuild associations per a strategy and evaluate")
    abl.add_argument("--in", dest="input", required=True)
    abl.add_argument("--out", required=True, help="output report JSON")
    abl.add_argument(
        "--mode",
        choices=["none", "spatial", "temporal", "random-same-repo", "random-other-repo", "noise"],
    )
    abl.add_argument("--seed", type=int)
    abl.add_argument("--radius", type=int)
    abl.add_argument("--max-edits", dest="max_edits", type=int)
    abl.add_argument("--pool-filter", dest="pool_filter", choices=["filtered", "unfiltered"])
    abl.add_argument("--backend", choices=["mirror", "echo", "remote"])
    abl.add_argument("--endpoint")
    abl.add_argument("--model")
    abl.add_argument("--n", type=int)
    abl.add_argument("--temperature", type=float)
    abl.add_argument("--max-tokens", dest="max_tokens", type=int)
    abl.add_argument("--stop")
    abl.add_argument("--beam-width", dest="beam_width", type=int)
    abl.add_argument("--budget-tokens", dest="budget_tokens", type=int)
    abl.add_argument("--protocol", choices=["exact", "futures"])
    abl.add_argument("--topk", type=int)
    abl.add_argument("--k-futures", dest="k_futures", type=int)
    abl.add_argument("--max-concurrency", dest="max_concurrency", type=int)
    abl.add_argument("--retry-attempts", dest="retry_attempts", type=int)
    abl.add_argument("--retry-backoff-ms", dest="retry_backoff_ms", type=int)
    abl.add_argument("--jobs", type=int)
    _add_common(abl)
    abl.set_defaults(func=_cmd_ablate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    func: Optional[Callable[[argparse.Namespace, Sequence[str]], None]] = getattr(
        args, "func", None
    )
    if func is None:
        print(parser.format_usage(), file=sys.stderr)
        return 1
    try:
        func(args, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except RemoteFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
