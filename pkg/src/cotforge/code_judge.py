"""Extract candidate programs and judge them against test cases.

Judging goes through an external worker process speaking a one-line-JSON
job/report protocol over stdin/stdout, so tests can substitute a scripted
mock worker and the real sandbox worker stays a separate component.
A candidate is positive only when every case passes; there is no partial
credit.
"""

from __future__ import annotations

import itertools
import json
import logging
import queue
import re
import subprocess
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .prompts import CompareMode, TestCase

logger = logging.getLogger(__name__)


class CaseStatus(str, Enum):
    PASS = "pass"
    WRONG_OUTPUT = "wrong_output"
    TIMEOUT = "timeout"
    RUNTIME_ERROR = "runtime_error"
    OUTPUT_TRUNCATED = "output_truncated"


@dataclass(frozen=True)
class ExecutionLimits:
    per_case_timeout_ms: int = 10_000
    memory_limit_mb: int = 512
    max_output_bytes: int = 1_000_000

    def __post_init__(self) -> None:
        if min(self.per_case_timeout_ms, self.memory_limit_mb, self.max_output_bytes) <= 0:
            raise ValueError("execution limits must be strictly positive")

    def to_record(self) -> dict:
        return {
            "per_case_timeout_ms": self.per_case_timeout_ms,
            "memory_limit_mb": self.memory_limit_mb,
            "max_output_bytes": self.max_output_bytes,
        }


@dataclass(frozen=True)
class CodeCandidate:
    source: str
    language_hint: str = ""


@dataclass(frozen=True)
class JudgeResult:
    case_results: tuple[CaseStatus, ...]
    all_pass: bool
    output_prefixes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        expected = bool(self.case_results) and all(s is CaseStatus.PASS for s in self.case_results)
        if self.all_pass != expected:
            raise ValueError("all_pass must be the conjunction of per-case passes")

    @classmethod
    def from_cases(cls, statuses: Sequence[CaseStatus], prefixes: Sequence[str] = ()) -> "JudgeResult":
        statuses = tuple(statuses)
        return cls(
            case_results=statuses,
            all_pass=bool(statuses) and all(s is CaseStatus.PASS for s in statuses),
            output_prefixes=tuple(prefixes),
        )


_FENCE_OPEN = re.compile(r"^\s*```([A-Za-z0-9_+.-]*)\s*$")
_FENCE_CLOSE = re.compile(r"^\s*```\s*$")


def closed_code_blocks(text: str) -> list[CodeCandidate]:
    """All closed fenced blocks, in order of appearance."""
    blocks: list[CodeCandidate] = []
    lang: Optional[str] = None
    body: list[str] = []
    for line in text.splitlines():
        if lang is None:
            m = _FENCE_OPEN.match(line)
            if m:
                lang = m.group(1)
                body = []
        else:
            if _FENCE_CLOSE.match(line):
                source = "\n".join(body)
                if source.strip():
                    blocks.append(CodeCandidate(source=source + "\n", language_hint=lang))
                lang = None
            else:
                body.append(line)
    return blocks


def has_closed_code_block(text: str) -> bool:
    return bool(closed_code_blocks(text))


def extract_code(text: str) -> Optional[CodeCandidate]:
    """The last closed fenced block; None when generation stopped mid-block."""
    blocks = closed_code_blocks(text)
    return blocks[-1] if blocks else None


def outputs_match(actual: str, expected: str, mode: CompareMode) -> bool:
    if mode is CompareMode.EXACT:
        return actual == expected
    actual_lines = [line.rstrip() for line in actual.split("\n")]
    expected_lines = [line.rstrip() for line in expected.split("\n")]
    while actual_lines and actual_lines[-1] == "":
        actual_lines.pop()
    while expected_lines and expected_lines[-1] == "":
        expected_lines.pop()
    return actual_lines == expected_lines


# ---------------------------------------------------------------------------
# worker protocol

class WorkerProtocolError(RuntimeError):
    pass


def job_record(job_id: str, candidate: CodeCandidate, cases: Sequence[TestCase], limits: ExecutionLimits) -> dict:
    return {
        "job_id": job_id,
        "source": candidate.source,
        "language_hint": candidate.language_hint,
        "cases": [
            {
                "input": tc.input,
                "expected_output": tc.expected_output,
                "compare_mode": tc.compare_mode.value,
            }
            for tc in cases
        ],
        "limits": limits.to_record(),
    }


def parse_report(line: str, job_id: str, n_cases: int) -> JudgeResult:
    try:
        rec = json.loads(line)
    except ValueError as exc:
        raise WorkerProtocolError(f"unparseable worker report: {exc}: {line[:200]!r}")
    if rec.get("job_id") != job_id:
        raise WorkerProtocolError(f"report for job {rec.get('job_id')!r}, expected {job_id!r}")
    raw_cases = rec.get("case_results")
    if not isinstance(raw_cases, list) or len(raw_cases) != n_cases:
        raise WorkerProtocolError(
            f"report has {len(raw_cases) if isinstance(raw_cases, list) else 'no'} case results, expected {n_cases}"
        )
    statuses: list[CaseStatus] = []
    prefixes: list[str] = []
    for entry in raw_cases:
        try:
            status, prefix = entry[0], entry[1]
            statuses.append(CaseStatus(status))
            prefixes.append(str(prefix))
        except (ValueError, IndexError, TypeError) as exc:
            raise WorkerProtocolError(f"bad case result {entry!r}: {exc}")
    result = JudgeResult.from_cases(statuses, prefixes)
    if bool(rec.get("all_pass")) != result.all_pass:
        raise WorkerProtocolError("report all_pass disagrees with its case results")
    return result


class WorkerClient:
    """One worker subprocess; sends job lines, reads report lines."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self._proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._job_counter = itertools.count()
        self._spawn()

    def _spawn(self) -> None:
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lines = queue.Queue()
        reader = threading.Thread(target=self._read_loop, args=(self._proc,), daemon=True)
        reader.start()

    def _read_loop(self, proc: subprocess.Popen) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _deadline_s(self, cases: Sequence[TestCase], limits: ExecutionLimits) -> float:
        per_case = limits.per_case_timeout_ms / 1000.0 + 0.5
        return len(cases) * per_case + 10.0

    def judge(self, candidate: CodeCandidate, cases: Sequence[TestCase], limits: ExecutionLimits) -> JudgeResult:
        if not cases:
            raise ValueError("cases must be non-empty")
        if self._proc is None or self._proc.poll() is not None:
            self._spawn()
        job_id = f"job-{next(self._job_counter)}"
        line = json.dumps(job_record(job_id, candidate, cases, limits), ensure_ascii=False)
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            return self._crashed(cases, "worker pipe closed")
        try:
            reply = self._lines.get(timeout=self._deadline_s(cases, limits))
        except queue.Empty:
            self._kill()
            return self._crashed(cases, "worker deadline exceeded")
        if reply is None:
            return self._crashed(cases, "worker exited")
        return parse_report(reply, job_id, len(cases))

    def _crashed(self, cases: Sequence[TestCase], why: str) -> JudgeResult:
        logger.warning("worker crash (%s); marking %d cases runtime_error", why, len(cases))
        self._kill()
        return JudgeResult.from_cases([CaseStatus.RUNTIME_ERROR] * len(cases), [""] * len(cases))

    def _kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None

    def __enter__(self) -> "WorkerClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class WorkerPool:
    """Fixed pool of workers; the dispatcher queue serializes assignment."""

    def __init__(self, command: Sequence[str], size: int = 4):
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self.size = size
        self._idle: "queue.Queue[WorkerClient]" = queue.Queue()
        self._clients = [WorkerClient(command) for _ in range(size)]
        for client in self._clients:
            self._idle.put(client)

    def judge(self, candidate: CodeCandidate, cases: Sequence[TestCase], limits: ExecutionLimits) -> JudgeResult:
        client = self._idle.get()
        try:
            return client.judge(candidate, cases, limits)
        finally:
            self._idle.put(client)

    def close(self) -> None:
        for client in self._clients:
            client.close()

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def judge(
    candidate: CodeCandidate,
    cases: Sequence[TestCase],
    limits: ExecutionLimits,
    worker: WorkerClient | WorkerPool,
) -> JudgeResult:
    return worker.judge(candidate, cases, limits)
