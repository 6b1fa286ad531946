"""Fan-out sampling client: N completions per prompt from a chat backend.

The only concurrent part of the pipeline. Requests go through a bounded
runner (default cap 16 in flight); failed requests become Error completions
after retry exhaustion so per-prompt counts stay exact. A deterministic
in-process stub backend provides the desk-scale oracle for every
end-to-end test: given a seed and a correct/wrong/unformatted mix it emits
the same bytes on every run.
"""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence

from . import jsonl
from .prompts import Domain, Prompt, PromptSet

logger = logging.getLogger(__name__)


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class SamplingParams:
    n_samples: int = 10
    temperature: float = 1.0
    max_tokens: int = 8192
    system_template: str = "You are a careful assistant. Reason step by step before answering."
    seed_base: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class Completion:
    prompt_id: str
    sample_index: int
    text: str
    finish_reason: FinishReason
    latency_ms: int

    def key(self) -> str:
        return f"{self.prompt_id}:{self.sample_index}"

    def to_record(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "sample_index": self.sample_index,
            "text": self.text,
            "finish_reason": self.finish_reason.value,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Completion":
        return cls(
            prompt_id=rec["prompt_id"],
            sample_index=int(rec["sample_index"]),
            text=rec["text"],
            finish_reason=FinishReason(rec["finish_reason"]),
            latency_ms=int(rec["latency_ms"]),
        )


@dataclass(frozen=True)
class CompletionRequest:
    """One unit of work for a backend.

    prompt_id / sample_index / n_total are client-side metadata: the HTTP
    backend only uses them to derive the wire seed, while the stub backend
    uses them to stay deterministic.
    """

    prompt_id: str
    sample_index: int
    n_total: int
    messages: tuple[dict, ...]
    temperature: float
    max_tokens: int
    seed: int


@dataclass(frozen=True)
class BackendReply:
    text: str
    finish_reason: FinishReason = FinishReason.STOP
    latency_ms: Optional[int] = None


class BackendError(RuntimeError):
    pass


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> BackendReply: ...


def stable_hash(*parts: object) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def request_seed(seed_base: int, prompt_id: str, sample_index: int) -> int:
    return (seed_base + stable_hash(prompt_id, sample_index)) % (2**31)


class BoundedRunner:
    """Thread-pool fan-out with an observable in-flight cap.

    max_in_flight_seen is exposed so tests can assert the cap held.
    """

    def __init__(self, max_in_flight: int = 16):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.cap = max_in_flight
        self._pool = ThreadPoolExecutor(max_workers=max_in_flight)
        self._lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight_seen = 0

    def submit(self, fn: Callable, *args) -> Future:
        def wrapped():
            with self._lock:
                self._in_flight += 1
                self.max_in_flight_seen = max(self.max_in_flight_seen, self._in_flight)
            try:
                return fn(*args)
            finally:
                with self._lock:
                    self._in_flight -= 1

        return self._pool.submit(wrapped)

    def map(self, fn: Callable, items: Iterable) -> list:
        futures = [self.submit(fn, item) for item in items]
        return [f.result() for f in futures]

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)

    def __enter__(self) -> "BoundedRunner":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


def build_messages(params: SamplingParams, prompt: Prompt) -> tuple[dict, ...]:
    messages: list[dict] = []
    if params.system_template:
        messages.append({"role": "system", "content": params.system_template})
    messages.append({"role": "user", "content": prompt.text})
    return tuple(messages)


def build_request(prompt: Prompt, params: SamplingParams, sample_index: int, n_total: int) -> CompletionRequest:
    return CompletionRequest(
        prompt_id=prompt.id,
        sample_index=sample_index,
        n_total=n_total,
        messages=build_messages(params, prompt),
        temperature=params.temperature,
        max_tokens=params.max_tokens,
        seed=request_seed(params.seed_base, prompt.id, sample_index),
    )


def _complete_one(backend: Backend, request: CompletionRequest) -> Completion:
    start = time.monotonic()
    try:
        reply = backend.complete(request)
    except BackendError as exc:
        logger.warning("sample %s:%d failed: %s", request.prompt_id, request.sample_index, exc)
        elapsed = int((time.monotonic() - start) * 1000)
        return Completion(request.prompt_id, request.sample_index, "", FinishReason.ERROR, elapsed)
    latency = reply.latency_ms if reply.latency_ms is not None else int((time.monotonic() - start) * 1000)
    return Completion(request.prompt_id, request.sample_index, reply.text, reply.finish_reason, latency)


def sample(
    prompt: Prompt,
    params: SamplingParams,
    budget: int,
    backend: Backend,
    runner: Optional[BoundedRunner] = None,
) -> list[Completion]:
    """Exactly `budget` completions with dense sample_index 0..budget-1."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    requests = [build_request(prompt, params, i, budget) for i in range(budget)]
    if runner is None:
        with BoundedRunner() as local:
            return local.map(lambda r: _complete_one(backend, r), requests)
    return runner.map(lambda r: _complete_one(backend, r), requests)


# ---------------------------------------------------------------------------
# HTTP backend

_RETRYABLE_STATUS = {408, 425, 429, 500, 502, 503, 504}


class HttpBackend:
    """Chat-completion HTTP client with bounded retries.

    Speaks the common open chat-completion shape:
    request  {model, messages, temperature, max_tokens, n, seed?}
    response {choices: [{message: {content}, finish_reason}]}
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        timeout_s: float = 120.0,
        max_attempts: int = 3,
        backoff_base_s: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        session=None,
    ):
        import requests

        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s
        self._sleep = sleep
        self._session = session or requests.Session()
        self._requests = requests

    def complete(self, request: CompletionRequest) -> BackendReply:
        body = {
            "model": self.model,
            "messages": list(request.messages),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "n": 1,
            "seed": request.seed,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = "unknown"
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._session.post(self.endpoint, json=body, headers=headers, timeout=self.timeout_s)
            except self._requests.RequestException as exc:
                last_error = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse_reply(resp)
                last_error = f"status {resp.status_code}"
                if resp.status_code not in _RETRYABLE_STATUS:
                    raise BackendError(f"backend rejected request: {last_error}")
            if attempt < self.max_attempts:
                self._sleep(self.backoff_base_s * (2 ** (attempt - 1)))
        raise BackendError(f"backend unreachable after {self.max_attempts} attempts: {last_error}")

    def _parse_reply(self, resp) -> BackendReply:
        try:
            data = resp.json()
            choice = data["choices"][0]
            content = choice["message"]["content"]
            finish = choice.get("finish_reason", "stop")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed backend reply: {exc}")
        reason = FinishReason.LENGTH if finish == "length" else FinishReason.STOP
        return BackendReply(text=str(content), finish_reason=reason)


# ---------------------------------------------------------------------------
# deterministic stub backend

def allocate_mix(n: int, mix: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of n slots over mix fractions."""
    if n < 0:
        raise ValueError("n must be >= 0")
    total = sum(mix)
    if total <= 0:
        raise ValueError("mix must have positive mass")
    shares = [n * m / total for m in mix]
    counts = [int(s) for s in shares]
    remainder = n - sum(counts)
    order = sorted(range(len(mix)), key=lambda i: (counts[i] - shares[i], i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


_STUB_CORRECT_CODE = """import sys
values = [int(tok) for tok in sys.stdin.read().split()]
print(sum(values))
"""

_STUB_WRONG_CODE = """import sys
_ = sys.stdin.read()
print(0)
"""


@dataclass
class StubPromptInfo:
    domain: Domain
    reference_answer: Optional[str] = None


@dataclass
class StubBackend:
    """Seeded offline backend with an exact correct/wrong/unformatted mix.

    For a prompt sampled n times, sample indices are assigned categories by
    largest-remainder quota over `mix`, so a (0.6, 0.2, 0.2) mix at n=10
    yields exactly 6 correct, 2 wrong, and 2 unformatted completions.
    `plants` maps (prompt_id, sample_index) to a planted filter violation
    ("repetition" or "language") that replaces the slot's text.
    """

    prompt_info: Mapping[str, StubPromptInfo]
    mix: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    plants: Mapping[tuple[str, int], str] = field(default_factory=dict)

    def category_for(self, prompt_id: str, sample_index: int, n_total: int) -> str:
        counts = allocate_mix(n_total, self.mix)
        sequence = ["correct"] * counts[0] + ["wrong"] * counts[1] + ["unformatted"] * counts[2]
        return sequence[sample_index % len(sequence)]

    def complete(self, request: CompletionRequest) -> BackendReply:
        info = self.prompt_info.get(request.prompt_id)
        if info is None:
            raise BackendError(f"stub has no prompt info for {request.prompt_id!r}")
        plant = self.plants.get((request.prompt_id, request.sample_index))
        if plant is not None:
            return BackendReply(text=self._planted_text(plant), latency_ms=0)
        category = self.category_for(request.prompt_id, request.sample_index, request.n_total)
        question = next((m["content"] for m in request.messages if m["role"] == "user"), "")
        if info.domain is Domain.CODE:
            text = self._code_text(category, question, request.sample_index)
        else:
            text = self._math_text(category, question, info.reference_answer or "", request.sample_index)
        return BackendReply(text=text, latency_ms=0)

    @staticmethod
    def _planted_text(kind: str) -> str:
        if kind == "repetition":
            sentence = (
                "the quick brown fox jumps over the lazy dog while the clever cat "
                "watches from a tall fence and counts every single leap with "
                "remarkable patience and growing amusement indeed "
            )
            return sentence * 6
        if kind == "language":
            return "这道题的解法如下所示，我们先考虑已知条件，然后逐步推导出结论，最终得到答案。" * 3
        raise BackendError(f"unknown planted violation {kind!r}")

    @staticmethod
    def _wrong_answer(reference: str) -> str:
        from .math_answers import ValueKind, normalize

        value = normalize(reference)
        if value.kind in (ValueKind.RATIONAL, ValueKind.DECIMAL_AS_RATIONAL):
            return str(value.payload + 1)
        return f"not {reference}"

    def _math_text(self, category: str, question: str, reference: str, idx: int) -> str:
        lead = question.strip().splitlines()[0][:60] if question.strip() else "the problem"
        roll = stable_hash(self.seed, lead, idx) % 97
        body = (
            f"Let me think about this carefully. The question asks: {lead}\n"
            f"First I set up the relevant quantities and simplify (attempt {idx + 1}, draft {roll}).\n"
            "Hmm, I should double-check the arithmetic before committing to a value.\n"
            "Wait, the intermediate expression reduces nicely, so the path is sound.\n"
        )
        if category == "correct":
            return body + f"Therefore the final answer is \\boxed{{{reference}}}."
        if category == "wrong":
            return body + f"Therefore the final answer is \\boxed{{{self._wrong_answer(reference)}}}."
        return body + "I am not confident enough to commit to a final value here."

    def _code_text(self, category: str, question: str, idx: int) -> str:
        lead = question.strip().splitlines()[0][:60] if question.strip() else "the task"
        roll = stable_hash(self.seed, lead, idx) % 97
        body = (
            f"We need a program for: {lead}\n"
            f"Plan (attempt {idx + 1}, draft {roll}): read the integers from standard input, "
            "combine them, print the result.\n"
            "Wait, let me double-check the output format matches the examples.\n"
        )
        if category == "correct":
            return body + "```python\n" + _STUB_CORRECT_CODE + "```\n"
        if category == "wrong":
            return body + "```python\n" + _STUB_WRONG_CODE + "```\n"
        return body + "```python\nimport sys\nvalues = sys.stdin.read()\n# ran out of tokens before finishing"

    @classmethod
    def from_prompts(
        cls,
        prompts: Iterable[Prompt],
        mix: tuple[float, float, float] = (0.6, 0.2, 0.2),
        seed: int = 0,
        plants: Optional[Mapping[tuple[str, int], str]] = None,
    ) -> "StubBackend":
        info = {
            p.id: StubPromptInfo(domain=p.domain, reference_answer=p.reference_answer)
            for p in prompts
        }
        return cls(prompt_info=info, mix=mix, seed=seed, plants=dict(plants or {}))


# ---------------------------------------------------------------------------
# completion store

class CompletionStore:
    """Append-only JSONL store of completions with per-prompt done markers.

    A prompt's block is written in one append after all its samples finish;
    the done marker is appended afterwards, so a crash mid-block leaves the
    prompt unmarked and it is re-sampled on the next run. Readers see only
    prompts with a matching done marker.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.done_path = self.path.with_name(self.path.name + ".done")

    def completed(self) -> dict[str, int]:
        if not self.done_path.exists():
            return {}
        done: dict[str, int] = {}
        for rec in jsonl.iter_jsonl(self.done_path):
            done[rec["prompt_id"]] = int(rec["count"])
        return done

    def append_block(self, prompt_id: str, completions: Sequence[Completion]) -> None:
        jsonl.append_jsonl(self.path, (c.to_record() for c in completions))
        jsonl.append_jsonl(self.done_path, [{"prompt_id": prompt_id, "count": len(completions)}])

    def load(self) -> dict[str, list[Completion]]:
        """Completions of done-marked prompts, ordered by completion order.

        Duplicate (prompt_id, sample_index) pairs keep the last record so a
        crash-then-rerun block supersedes its partial predecessor.
        """
        done = self.completed()
        if not self.path.exists():
            return {}
        by_prompt: dict[str, dict[int, Completion]] = {}
        order: list[str] = []
        for rec in jsonl.iter_jsonl(self.path):
            c = Completion.from_record(rec)
            if c.prompt_id not in done:
                continue
            if c.prompt_id not in by_prompt:
                by_prompt[c.prompt_id] = {}
                order.append(c.prompt_id)
            by_prompt[c.prompt_id][c.sample_index] = c
        result: dict[str, list[Completion]] = {}
        for pid in order:
            block = [by_prompt[pid][i] for i in sorted(by_prompt[pid])]
            if len(block) == done[pid]:
                result[pid] = block
        return result


def run_sampling(
    pset: PromptSet,
    params: SamplingParams,
    budget_of: Callable[[Prompt], int],
    backend: Backend,
    store: CompletionStore,
    runner: Optional[BoundedRunner] = None,
) -> CompletionStore:
    """Sample every prompt to its budget, skipping already-complete prompts.

    All requests are submitted upfront to the bounded runner; blocks are
    committed in prompt order so reruns are byte-identical.
    """
    owns_runner = runner is None
    if owns_runner:
        runner = BoundedRunner()
    try:
        done = store.completed()
        pending: list[tuple[Prompt, list[Future]]] = []
        for prompt in pset:
            budget = budget_of(prompt)
            if done.get(prompt.id) == budget:
                continue
            futures = [
                runner.submit(_complete_one, backend, build_request(prompt, params, i, budget))
                for i in range(budget)
            ]
            pending.append((prompt, futures))
        for prompt, futures in pending:
            block = [f.result() for f in futures]
            store.append_block(prompt.id, block)
    finally:
        if owns_runner:
            runner.shutdown()
    return store
