"""Per-case execution with limits and verdict classification."""

from __future__ import annotations

import shutil
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

try:
    import resource
except ImportError:  # non-POSIX; memory limits become a no-op
    resource = None

OUTPUT_PREFIX_CHARS = 200

STATUS_PASS = "pass"
STATUS_WRONG = "wrong_output"
STATUS_TIMEOUT = "timeout"
STATUS_RUNTIME_ERROR = "runtime_error"
STATUS_TRUNCATED = "output_truncated"


@dataclass
class CaseResult:
    status: str
    output_prefix: str


def outputs_match(actual: str, expected: str, mode: str) -> bool:
    if mode == "exact":
        return actual == expected
    # trimmed_lines: per-line trailing whitespace trimmed, trailing blank lines ignored
    a = [line.rstrip() for line in actual.split("\n")]
    b = [line.rstrip() for line in expected.split("\n")]
    while a and a[-1] == "":
        a.pop()
    while b and b[-1] == "":
        b.pop()
    return a == b


class _CappedReader(threading.Thread):
    """Drains a pipe up to a byte cap; kills the producer once exceeded."""

    def __init__(self, stream, cap: int, proc: subprocess.Popen):
        super().__init__(daemon=True)
        self.stream = stream
        self.cap = cap
        self.proc = proc
        self.data = bytearray()
        self.truncated = False

    def run(self) -> None:
        while True:
            chunk = self.stream.read(8192)
            if not chunk:
                return
            self.data.extend(chunk)
            if len(self.data) > self.cap:
                self.truncated = True
                self.proc.kill()
                return


def _make_preexec(memory_limit_mb: int):
    if resource is None:
        return None
    limit_bytes = memory_limit_mb * 1024 * 1024

    def set_limits():
        resource.setrlimit(resource.RLIMIT_AS, (limit_bytes, limit_bytes))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))

    return set_limits


def run_case(source: str, case: dict, limits: dict, interpreter: Sequence[str]) -> CaseResult:
    """Execute one test case in a fresh scratch directory under all limits."""
    scratch = Path(tempfile.mkdtemp(prefix="sbx-case-"))
    try:
        program = scratch / "prog.py"
        program.write_text(source, encoding="utf-8")
        try:
            proc = subprocess.Popen(
                [*interpreter, str(program)],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                cwd=scratch,
                preexec_fn=_make_preexec(int(limits["memory_limit_mb"])),
            )
        except OSError as exc:
            return CaseResult(STATUS_RUNTIME_ERROR, f"interpreter unavailable: {exc}"[:OUTPUT_PREFIX_CHARS])

        reader = _CappedReader(proc.stdout, int(limits["max_output_bytes"]), proc)
        reader.start()

        def feed_stdin():
            try:
                proc.stdin.write(case.get("input", "").encode("utf-8"))
                proc.stdin.close()
            except (BrokenPipeError, OSError):
                pass

        writer = threading.Thread(target=feed_stdin, daemon=True)
        writer.start()

        timed_out = False
        try:
            proc.wait(timeout=int(limits["per_case_timeout_ms"]) / 1000.0)
        except subprocess.TimeoutExpired:
            timed_out = True
            proc.kill()
            proc.wait()
        reader.join(timeout=2.0)
        writer.join(timeout=2.0)

        actual = reader.data.decode("utf-8", errors="replace")
        prefix = actual[:OUTPUT_PREFIX_CHARS]
        if timed_out:
            return CaseResult(STATUS_TIMEOUT, prefix)
        if reader.truncated:
            return CaseResult(STATUS_TRUNCATED, prefix)
        if proc.returncode != 0:
            return CaseResult(STATUS_RUNTIME_ERROR, prefix)
        expected = case.get("expected_output", "")
        mode = case.get("compare_mode", "trimmed_lines")
        if outputs_match(actual, expected, mode):
            return CaseResult(STATUS_PASS, prefix)
        return CaseResult(STATUS_WRONG, prefix)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def run_job(job: dict, interpreter: Sequence[str]) -> dict:
    """One report per job; every case executes in isolation, in order."""
    results = [run_case(job["source"], case, job["limits"], interpreter) for case in job["cases"]]
    return {
        "job_id": job["job_id"],
        "case_results": [[r.status, r.output_prefix] for r in results],
        "all_pass": bool(results) and all(r.status == STATUS_PASS for r in results),
    }
