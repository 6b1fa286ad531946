from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from cotforge.prompts import PromptSet
from cotforge.sampling import (
    Backend,
    BackendError,
    BackendReply,
    BoundedRunner,
    Completion,
    CompletionStore,
    FinishReason,
    HttpBackend,
    SamplingParams,
    StubBackend,
    allocate_mix,
    request_seed,
    run_sampling,
    sample,
)

from .conftest import make_code_prompt, make_math_prompt

PARAMS = SamplingParams(n_samples=10, seed_base=7)


class FailingBackend:
    def complete(self, request):
        raise BackendError("backend down")


class CountingBackend:
    def __init__(self, inner: Backend):
        self.inner = inner
        self.calls = 0
        self.prompt_ids: set[str] = set()
        self._lock = threading.Lock()

    def complete(self, request):
        with self._lock:
            self.calls += 1
            self.prompt_ids.add(request.prompt_id)
        return self.inner.complete(request)


class TestAllocateMix:
    def test_ten_samples_sixty_twenty_twenty(self):
        assert allocate_mix(10, (0.6, 0.2, 0.2)) == [6, 2, 2]

    def test_eight_samples(self):
        assert allocate_mix(8, (0.6, 0.2, 0.2)) == [5, 2, 1]

    def test_counts_always_sum_to_n(self):
        for n in range(0, 30):
            assert sum(allocate_mix(n, (0.55, 0.25, 0.2))) == n


class TestSample:
    def test_budget_ten_all_stop(self):
        prompt = make_math_prompt()
        backend = StubBackend.from_prompts([prompt])
        completions = sample(prompt, PARAMS, 10, backend)
        assert len(completions) == 10
        assert all(c.finish_reason is FinishReason.STOP for c in completions)
        assert [c.sample_index for c in completions] == list(range(10))

    def test_budget_eight(self):
        prompt = make_math_prompt("g1")
        backend = StubBackend.from_prompts([prompt])
        assert len(sample(prompt, PARAMS, 8, backend)) == 8

    def test_backend_down_yields_budget_error_completions(self):
        prompt = make_math_prompt()
        completions = sample(prompt, PARAMS, 10, FailingBackend())
        assert len(completions) == 10
        assert all(c.finish_reason is FinishReason.ERROR and c.text == "" for c in completions)

    def test_completion_keys_unique(self):
        prompt = make_math_prompt()
        backend = StubBackend.from_prompts([prompt])
        completions = sample(prompt, PARAMS, 10, backend)
        assert len({c.key() for c in completions}) == 10


class TestRunSampling:
    def _pset(self, n=5):
        return PromptSet.build(make_math_prompt(f"m{i}", text=f"What is {i}+{i}?") for i in range(n))

    def test_five_prompts_times_ten(self, tmp_path):
        pset = self._pset()
        backend = StubBackend.from_prompts(pset)
        store = CompletionStore(tmp_path / "c.jsonl")
        run_sampling(pset, PARAMS, lambda p: 10, backend, store)
        loaded = store.load()
        assert sum(len(v) for v in loaded.values()) == 50

    def test_restart_skips_complete_prompts(self, tmp_path):
        pset = self._pset(5)
        first_three = PromptSet.build(pset.prompts[:3])
        backend = CountingBackend(StubBackend.from_prompts(pset))
        store = CompletionStore(tmp_path / "c.jsonl")
        run_sampling(first_three, PARAMS, lambda p: 10, backend, store)
        assert backend.calls == 30
        run_sampling(pset, PARAMS, lambda p: 10, backend, store)
        assert backend.calls == 50
        assert backend.prompt_ids == {p.id for p in pset}

    def test_mixed_budgets(self, tmp_path):
        pset = PromptSet.build([make_math_prompt("a", level=7), make_math_prompt("b", text="q2", level=9)])
        backend = StubBackend.from_prompts(pset)
        store = CompletionStore(tmp_path / "c.jsonl")
        budgets = {"a": 10, "b": 20}
        run_sampling(pset, PARAMS, lambda p: budgets[p.id], backend, store)
        loaded = store.load()
        assert len(loaded["a"]) == 10 and len(loaded["b"]) == 20

    def test_byte_reproducible_with_stub_and_fixed_seed(self, tmp_path):
        pset = self._pset()
        for run in ("one", "two"):
            backend = StubBackend.from_prompts(pset, seed=3)
            store = CompletionStore(tmp_path / run / "c.jsonl")
            run_sampling(pset, PARAMS, lambda p: 10, backend, store)
        assert (tmp_path / "one" / "c.jsonl").read_bytes() == (tmp_path / "two" / "c.jsonl").read_bytes()

    def test_partial_block_is_invisible_and_resampled(self, tmp_path):
        pset = self._pset(1)
        store = CompletionStore(tmp_path / "c.jsonl")
        # simulate a crash mid-block: records written, no done marker
        from cotforge import jsonl

        half = [Completion("m0", i, "partial", FinishReason.STOP, 0) for i in range(5)]
        jsonl.append_jsonl(store.path, (c.to_record() for c in half))
        assert store.load() == {}
        backend = StubBackend.from_prompts(pset)
        run_sampling(pset, PARAMS, lambda p: 10, backend, store)
        loaded = store.load()
        assert len(loaded["m0"]) == 10
        assert all(c.text != "partial" for c in loaded["m0"])


class TestBoundedConcurrency:
    def test_in_flight_never_exceeds_cap(self):
        class SlowBackend:
            def complete(self, request):
                time.sleep(0.01)
                return BackendReply(text="\\boxed{1}", latency_ms=0)

        prompt = make_math_prompt()
        runner = BoundedRunner(max_in_flight=4)
        with runner:
            sample(prompt, PARAMS, 60, SlowBackend(), runner=runner)
        assert 1 <= runner.max_in_flight_seen <= 4

    def test_concurrency_actually_happens(self):
        class SlowBackend:
            def complete(self, request):
                time.sleep(0.02)
                return BackendReply(text="x", latency_ms=0)

        with BoundedRunner(max_in_flight=8) as runner:
            start = time.monotonic()
            runner.map(lambda r: SlowBackend().complete(r), range(16))
            elapsed = time.monotonic() - start
        assert elapsed < 0.02 * 16
        assert runner.max_in_flight_seen > 1


class TestStubDeterminism:
    def test_same_request_same_reply(self):
        prompt = make_math_prompt()
        a = StubBackend.from_prompts([prompt], seed=5)
        b = StubBackend.from_prompts([prompt], seed=5)
        for idx in range(10):
            ca = sample(prompt, PARAMS, 10, a)[idx]
            cb = sample(prompt, PARAMS, 10, b)[idx]
            assert ca == cb

    def test_code_prompt_stub_emits_fenced_blocks(self):
        prompt = make_code_prompt()
        backend = StubBackend.from_prompts([prompt])
        completions = sample(prompt, PARAMS, 10, backend)
        closed = [c for c in completions if "```python" in c.text and c.text.rstrip().endswith("```")]
        assert len(closed) == 8  # 6 correct + 2 wrong; unformatted never closes

    def test_unknown_prompt_is_a_backend_error(self):
        backend = StubBackend(prompt_info={})
        prompt = make_math_prompt("mystery")
        completions = sample(prompt, PARAMS, 3, backend)
        assert all(c.finish_reason is FinishReason.ERROR for c in completions)

    def test_request_seed_is_stable(self):
        assert request_seed(7, "p1", 0) == request_seed(7, "p1", 0)
        assert request_seed(7, "p1", 0) != request_seed(7, "p1", 1)


# -- HTTP backend against a local server ------------------------------------


class _Handler(BaseHTTPRequestHandler):
    behaviors: list[str] = []
    requests_seen: list[dict] = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).requests_seen.append(body)
        behavior = type(self).behaviors.pop(0) if type(self).behaviors else "ok"
        if behavior == "flaky":
            self.send_response(503)
            self.end_headers()
            return
        if behavior == "malformed":
            payload = {"unexpected": "shape"}
        else:
            payload = {
                "choices": [
                    {"message": {"content": f"echo:{body['messages'][-1]['content']}"}, "finish_reason": "stop"}
                ]
            }
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.behaviors = []
    _Handler.requests_seen = []
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    server.shutdown()


class TestHttpBackend:
    def test_request_shape_and_reply(self, http_server):
        backend = HttpBackend(http_server, model="test-model", sleep=lambda s: None)
        prompt = make_math_prompt()
        completions = sample(prompt, PARAMS, 2, backend)
        assert all(c.finish_reason is FinishReason.STOP for c in completions)
        assert completions[0].text == f"echo:{prompt.text}"
        body = _Handler.requests_seen[0]
        assert body["model"] == "test-model"
        assert body["n"] == 1
        assert {m["role"] for m in body["messages"]} == {"system", "user"}
        assert isinstance(body["seed"], int)

    def test_retries_then_succeeds(self, http_server):
        _Handler.behaviors = ["flaky", "flaky"]
        naps = []
        backend = HttpBackend(http_server, model="m", max_attempts=3, sleep=naps.append)
        completions = sample(make_math_prompt(), PARAMS, 1, backend)
        assert completions[0].finish_reason is FinishReason.STOP
        assert naps == [1.0, 2.0]

    def test_retry_exhaustion_becomes_error_completion(self, http_server):
        _Handler.behaviors = ["flaky"] * 10
        backend = HttpBackend(http_server, model="m", max_attempts=3, sleep=lambda s: None)
        completions = sample(make_math_prompt(), PARAMS, 1, backend)
        assert completions[0].finish_reason is FinishReason.ERROR

    def test_malformed_reply_becomes_error_completion(self, http_server):
        _Handler.behaviors = ["malformed"]
        backend = HttpBackend(http_server, model="m", sleep=lambda s: None)
        completions = sample(make_math_prompt(), PARAMS, 1, backend)
        assert completions[0].finish_reason is FinishReason.ERROR

    def test_unreachable_endpoint(self):
        from cotforge.sampling import build_request

        backend = HttpBackend("http://127.0.0.1:9/nope", model="m", max_attempts=2, sleep=lambda s: None)
        request = build_request(make_math_prompt(), PARAMS, 0, 1)
        with pytest.raises(BackendError):
            backend.complete(request)
