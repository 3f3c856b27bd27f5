"""Offline baselines, ranked prediction assembly, and the remote client.

Remote tests run against an in-process stub HTTP server; nothing here
touches the network.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from assocedit.backends import (
    BackendConfig,
    BackendKind,
    InferenceParams,
    RetryPolicy,
    mirror_transform,
    parse_tag_prompt,
    predict,
    remote_insertion_call,
)
from assocedit.edits import Example
from assocedit.errors import AuthError, BackendError, TransportError
from assocedit.prompting import build_no_edit_prompt, build_tag_prompt

from conftest import make_edit

MIRROR = BackendConfig(kind=BackendKind.MIRROR)
ECHO = BackendConfig(kind=BackendKind.ECHO)


def example_with(ctx_pairs, before, ident="ex"):
    ctx = tuple(
        make_edit(list(b), list(a), start=2 + 4 * i, order=i) for i, (b, a) in enumerate(ctx_pairs)
    )
    current = make_edit(list(before), list(before) + ["<changed>"], start=30, order=9)
    return Example(id=ident, current=current, ctx_edits=ctx)


class TestMirrorBackend:
    def test_transfers_attribute_rewrite(self):
        ex = example_with([(["[Test]"], ["[Fact]"])], ["[Test]"])
        ranked = predict(MIRROR, build_tag_prompt(ex))
        assert ranked[0].rank == 1
        assert ranked[0].text == ("[Fact]",)

    def test_transfers_using_directive_swap(self):
        ex = example_with(
            [(["using NUnit.Framework;"], ["using Xunit;"])], ["using NUnit.Framework;"]
        )
        ranked = predict(MIRROR, build_tag_prompt(ex))
        assert ranked[0].text == ("using Xunit;",)

    def test_cannot_generate_unseen_line(self):
        # the ctx teaches a using-directive swap, but the target needs an
        # attribute it has never seen; a line-literal baseline passes through
        ex = example_with(
            [(["using NUnit.Framework;"], ["using Xunit;"])], ["[ Test ]"]
        )
        ranked = predict(MIRROR, build_tag_prompt(ex))
        assert ranked[0].text == ("[ Test ]",)  # not "[ Fact ]"

    def test_no_ctx_passes_through(self):
        ex = example_with([], ["keep me;"])
        ranked = predict(MIRROR, build_no_edit_prompt(ex))
        assert ranked[0].text == ("keep me;",)

    def test_deterministic(self):
        ex = example_with([(["a;"], ["b;"])], ["a;", "z;"])
        assert predict(MIRROR, build_tag_prompt(ex)) == predict(MIRROR, build_tag_prompt(ex))


class TestEchoBackend:
    def test_predicts_no_change(self):
        ex = example_with([(["x"], ["y"])], ["left alone;"])
        ranked = predict(ECHO, build_tag_prompt(ex))
        assert ranked[0].text == ("left alone;",)


class TestConfigValidation:
    def test_remote_requires_endpoint(self):
        with pytest.raises(ValueError):
            BackendConfig(kind=BackendKind.REMOTE_INSERTION)

    def test_inference_params_bounds(self):
        with pytest.raises(ValueError):
            InferenceParams(n=0)
        with pytest.raises(ValueError):
            InferenceParams(temperature=-0.1)
        with pytest.raises(ValueError):
            InferenceParams(max_tokens=0)


class TestMirrorTransform:
    def test_empty_ctx_is_identity(self):
        assert mirror_transform([], ["a", "b"]) == ["a", "b"]

    def test_disjoint_edits_compose(self):
        ctx = [
            make_edit(["first();"], ["first(1);"], start=0, order=0),
            make_edit(["second();"], ["second(2);"], start=10, order=1),
        ]
        got = mirror_transform(ctx, ["first();", "middle();", "second();"])
        assert got == ["first(1);", "middle();", "second(2);"]

    def test_earliest_ctx_wins_conflicts(self):
        ctx = [
            make_edit(["dup();"], ["one();"], start=0, order=0),
            make_edit(["dup();"], ["two();"], start=10, order=1),
        ]
        assert mirror_transform(ctx, ["dup();"]) == ["one();"]

    def test_line_mapped_to_nothing_is_deleted(self):
        # positional alignment: the trailing before-line pairs with no after-line
        ctx = [make_edit(["keep();", "kill();"], ["keep();"], start=0)]
        assert mirror_transform(ctx, ["kill();"]) == []
        assert mirror_transform(ctx, ["other();", "kill();"]) == ["other();"]

    def test_last_line_absorbs_expansion(self):
        ctx = [make_edit(["grow();"], ["grow();", "extra();"], start=0)]
        assert mirror_transform(ctx, ["grow();"]) == ["grow();", "extra();"]

    def test_matching_is_whitespace_insensitive(self):
        ctx = [make_edit(["  spaced ( ) ;"], ["tight();"], start=0)]
        assert mirror_transform(ctx, ["spaced();"]) == ["spaced();"]  # tokens differ
        assert mirror_transform(ctx, ["spaced ( ) ;"]) == ["tight();"]


class TestParseTagPrompt:
    def test_recovers_before_and_ctx(self, scenario):
        parsed = parse_tag_prompt(build_tag_prompt(scenario.example))
        assert parsed.before == scenario.example.current.before
        assert len(parsed.ctx) == 1
        assert parsed.ctx[0].before == scenario.example.ctx_edits[0].before
        assert parsed.ctx[0].after == scenario.example.ctx_edits[0].after

    def test_malformed_prompt_is_backend_error(self):
        from assocedit.prompting import InsertionPrompt

        mangled = InsertionPrompt(
            prompt="<CurrentEdit>\n<Before>\nx\n</Before>\n<After>",
            suffix="</After>\n<CtxEdits>\n<Edit>\n<Prefix>\n",
        )
        with pytest.raises(BackendError, match="malformed"):
            parse_tag_prompt(mangled)


# ---------------------------------------------------------------------------
# Remote backend against a stub server
# ---------------------------------------------------------------------------


class _Stub:
    """Scripted HTTP stub recording request bodies and concurrency."""

    def __init__(self, script):
        self.script = list(script)  # (status, payload) per request, last repeats
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self.lock = threading.Lock()
        self.inflight = 0
        self.max_inflight = 0
        self.delay_s = 0.0

        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                with stub.lock:
                    stub.inflight += 1
                    stub.max_inflight = max(stub.max_inflight, stub.inflight)
                    index = len(stub.requests)
                    length = int(self.headers.get("Content-Length", "0"))
                    stub.requests.append(json.loads(self.rfile.read(length)))
                    stub.headers.append(dict(self.headers))
                try:
                    if stub.delay_s:
                        time.sleep(stub.delay_s)
                    status, payload = stub.script[min(index, len(stub.script) - 1)]
                    body = json.dumps(payload).encode("utf-8")
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                finally:
                    with stub.lock:
                        stub.inflight -= 1

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1/insert"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def remote_config(endpoint: str, **kwargs) -> BackendConfig:
    kwargs.setdefault("retry", RetryPolicy(max_attempts=3, base_backoff_ms=1))
    return BackendConfig(kind=BackendKind.REMOTE_INSERTION, endpoint=endpoint, **kwargs)


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("GRACE_API_KEY", "test-key")


def ok_choices(*texts: str) -> tuple[int, dict]:
    return (200, {"choices": [{"text": t} for t in texts]})


class TestRemoteBackend:
    def test_request_body_carries_split_and_params(self, scenario, api_key):
        split = build_tag_prompt(scenario.example)
        with _Stub([ok_choices("x;\n</After>")]) as stub:
            cfg = remote_config(stub.endpoint, model_name="insert-large")
            ranked = predict(cfg, split, InferenceParams())
        body = stub.requests[0]
        assert body["prompt"] == split.prompt
        assert body["suffix"] == split.suffix
        assert body["n"] == 5
        assert body["temperature"] == 0.1
        assert body["max_tokens"] == 256
        assert body["stop"] == "</After>"
        assert body["model"] == "insert-large"
        assert stub.headers[0]["Authorization"] == "Bearer test-key"
        assert ranked[0].text == ("x;",)

    def test_two_transient_failures_then_success(self, scenario, api_key):
        script = [(500, {"error": "boom"}), (503, {"error": "again"}), ok_choices("done\n")]
        with _Stub(script) as stub:
            cfg = remote_config(stub.endpoint)
            ranked = predict(cfg, build_tag_prompt(scenario.example), InferenceParams())
            assert len(stub.requests) == 3
        assert ranked[0].text == ("done",)

    def test_retry_exhaustion_is_transport_error(self, scenario, api_key):
        with _Stub([(500, {"error": "down"})]) as stub:
            cfg = remote_config(stub.endpoint)
            with pytest.raises(TransportError):
                remote_insertion_call(cfg, build_tag_prompt(scenario.example), InferenceParams())
            assert len(stub.requests) == 3

    def test_rejected_credential_is_auth_error(self, scenario, api_key):
        with _Stub([(401, {"error": "who?"})]) as stub:
            with pytest.raises(AuthError):
                remote_insertion_call(
                    remote_config(stub.endpoint),
                    build_tag_prompt(scenario.example),
                    InferenceParams(),
                )

    def test_provider_error_carries_message(self, scenario, api_key):
        with _Stub([(418, {"error": "teapot"})]) as stub:
            with pytest.raises(BackendError, match="teapot"):
                remote_insertion_call(
                    remote_config(stub.endpoint),
                    build_tag_prompt(scenario.example),
                    InferenceParams(),
                )

    def test_missing_credential_is_auth_error(self, scenario, monkeypatch):
        monkeypatch.delenv("GRACE_API_KEY", raising=False)
        cfg = remote_config("http://127.0.0.1:1/unreachable")
        with pytest.raises(AuthError):
            remote_insertion_call(cfg, build_tag_prompt(scenario.example), InferenceParams())

    def test_duplicates_deduped_and_ranks_dense(self, scenario, api_key):
        script = [ok_choices("a;\n", "a;   \n", "b;\n", "a;\n", "c;\n")]
        with _Stub(script) as stub:
            ranked = predict(
                remote_config(stub.endpoint),
                build_tag_prompt(scenario.example),
                InferenceParams(n=5),
            )
        assert [p.rank for p in ranked] == [1, 2, 3]
        assert [p.text for p in ranked] == [("a;",), ("b;",), ("c;",)]

    def test_provider_scores_reorder_candidates(self, scenario, api_key):
        script = [
            (
                200,
                {
                    "choices": [
                        {"text": "low\n", "score": 0.1},
                        {"text": "high\n", "score": 0.9},
                    ]
                },
            )
        ]
        with _Stub(script) as stub:
            ranked = predict(
                remote_config(stub.endpoint),
                build_tag_prompt(scenario.example),
                InferenceParams(),
            )
        assert [p.text for p in ranked] == [("high",), ("low",)]
        assert [p.score for p in ranked] == [0.9, 0.1]
        assert ranked[0].score >= ranked[1].score

    def test_inflight_requests_bounded_by_max_concurrency(self, scenario, api_key):
        with _Stub([ok_choices("x\n")]) as stub:
            stub.delay_s = 0.05
            cfg = remote_config(stub.endpoint, max_concurrency=2)
            split = build_tag_prompt(scenario.example)
            with ThreadPoolExecutor(max_workers=8) as pool:
                list(pool.map(lambda _: predict(cfg, split, InferenceParams()), range(8)))
            assert stub.max_inflight <= 2
            assert len(stub.requests) == 8
