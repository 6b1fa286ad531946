from __future__ import annotations

import subprocess
import sys
import time

import pytest

from cotforge.code_judge import (
    CaseStatus,
    CodeCandidate,
    ExecutionLimits,
    JudgeResult,
    WorkerClient,
    WorkerPool,
    WorkerProtocolError,
    closed_code_blocks,
    extract_code,
    judge,
    outputs_match,
)
from cotforge.prompts import CompareMode, TestCase

SUM_PROGRAM = "import sys\nvalues = [int(t) for t in sys.stdin.read().split()]\nprint(sum(values))\n"
CONSTANT_PROGRAM = "print(7)\n"

SUM_CASES = [
    TestCase(input="1 2\n", expected_output="3\n"),
    TestCase(input="10 20\n", expected_output="30\n"),
    TestCase(input="-4 4\n", expected_output="0\n"),
]

FAST = ExecutionLimits(per_case_timeout_ms=5000, memory_limit_mb=512, max_output_bytes=100_000)


class TestExtraction:
    def test_single_closed_block(self):
        text = "solution:\n```python\nprint(1)\n```\n"
        cand = extract_code(text)
        assert cand == CodeCandidate(source="print(1)\n", language_hint="python")

    def test_last_block_wins(self):
        text = "sketch:\n```python\n# draft\nx = 1\n```\nfinal:\n```python\nprint(2)\n```\n"
        assert extract_code(text).source == "print(2)\n"

    def test_unclosed_fence_is_none(self):
        assert extract_code("```python\nprint(1)") is None

    def test_no_fence_is_none(self):
        assert extract_code("prose only") is None

    def test_language_hint_from_fence_tag(self):
        blocks = closed_code_blocks("```cpp\nint main(){}\n```\n")
        assert blocks[0].language_hint == "cpp"


class TestOutputsMatch:
    def test_exact_is_byte_equality(self):
        assert outputs_match("3\n", "3\n", CompareMode.EXACT)
        assert not outputs_match("3", "3\n", CompareMode.EXACT)

    def test_trimmed_lines_ignores_trailing_ws_and_blank_lines(self):
        assert outputs_match("3 \n\n", "3\n", CompareMode.TRIMMED_LINES)
        assert outputs_match("a\nb", "a\nb\n\n", CompareMode.TRIMMED_LINES)
        assert not outputs_match("a\nb", "a\nc", CompareMode.TRIMMED_LINES)

    def test_trimmed_lines_keeps_interior_structure(self):
        assert not outputs_match("a\n\nb\n", "a\nb\n", CompareMode.TRIMMED_LINES)


def run_reference_oracle(source: str, cases: list[TestCase]) -> list[str]:
    """Execute the program directly; the expected outputs for judge tests."""
    outputs = []
    for case in cases:
        proc = subprocess.run(
            [sys.executable, "-c", source], input=case.input, capture_output=True, text=True, timeout=10
        )
        assert proc.returncode == 0
        outputs.append(proc.stdout)
    return outputs


class TestJudgeWithMockWorker:
    def test_correct_sum_program_passes_all_cases(self, mock_worker_command):
        # oracle first: the reference program really produces the expected outputs
        oracle_outputs = run_reference_oracle(SUM_PROGRAM, SUM_CASES)
        assert oracle_outputs == [tc.expected_output for tc in SUM_CASES]
        with WorkerClient(mock_worker_command) as worker:
            result = judge(CodeCandidate(SUM_PROGRAM, "python"), SUM_CASES, FAST, worker)
        assert result.case_results == (CaseStatus.PASS,) * 3
        assert result.all_pass is True

    def test_constant_program_fails_somewhere(self, mock_worker_command):
        with WorkerClient(mock_worker_command) as worker:
            result = judge(CodeCandidate(CONSTANT_PROGRAM, "python"), SUM_CASES, FAST, worker)
        assert CaseStatus.WRONG_OUTPUT in result.case_results
        assert result.all_pass is False

    def test_infinite_loop_times_out_within_grace(self, mock_worker_command):
        limits = ExecutionLimits(per_case_timeout_ms=1000, memory_limit_mb=512, max_output_bytes=1000)
        case = [TestCase(input="", expected_output="never\n")]
        with WorkerClient(mock_worker_command) as worker:
            start = time.monotonic()
            result = judge(CodeCandidate("while True: pass\n", "python"), case, limits, worker)
            elapsed = time.monotonic() - start
        assert result.case_results == (CaseStatus.TIMEOUT,)
        assert elapsed < 1.0 + 0.5 + 2.0  # timeout + grace + harness slack

    def test_timeout_in_one_case_does_not_poison_the_next(self, mock_worker_command):
        source = (
            "import sys\n"
            "data = sys.stdin.read().strip()\n"
            "if data == 'loop':\n"
            "    while True: pass\n"
            "print(data)\n"
        )
        cases = [
            TestCase(input="loop", expected_output="x\n"),
            TestCase(input="ok", expected_output="ok\n"),
        ]
        limits = ExecutionLimits(per_case_timeout_ms=1000, memory_limit_mb=512, max_output_bytes=1000)
        with WorkerClient(mock_worker_command) as worker:
            result = judge(CodeCandidate(source, "python"), cases, limits, worker)
        assert result.case_results == (CaseStatus.TIMEOUT, CaseStatus.PASS)

    def test_raising_program_is_runtime_error(self, mock_worker_command):
        with WorkerClient(mock_worker_command) as worker:
            result = judge(
                CodeCandidate("raise ValueError('boom')\n", "python"),
                [TestCase(input="", expected_output="1\n")],
                FAST,
                worker,
            )
        assert result.case_results == (CaseStatus.RUNTIME_ERROR,)

    def test_judging_is_deterministic(self, mock_worker_command):
        with WorkerClient(mock_worker_command) as worker:
            first = judge(CodeCandidate(SUM_PROGRAM, "python"), SUM_CASES, FAST, worker)
            second = judge(CodeCandidate(SUM_PROGRAM, "python"), SUM_CASES, FAST, worker)
        assert first == second

    def test_scripted_statuses(self, mock_worker_command):
        source = "#mock:statuses=pass,wrong_output,timeout\n"
        with WorkerClient(mock_worker_command) as worker:
            result = judge(CodeCandidate(source, "python"), SUM_CASES, FAST, worker)
        assert result.case_results == (CaseStatus.PASS, CaseStatus.WRONG_OUTPUT, CaseStatus.TIMEOUT)
        assert result.all_pass is False

    def test_worker_crash_marks_all_cases_runtime_error(self, mock_worker_command):
        with WorkerClient(mock_worker_command) as worker:
            result = judge(CodeCandidate("#mock:crash\n", "python"), SUM_CASES, FAST, worker)
            assert result.case_results == (CaseStatus.RUNTIME_ERROR,) * 3
            # the client respawns and keeps serving
            again = judge(CodeCandidate(SUM_PROGRAM, "python"), SUM_CASES, FAST, worker)
        assert again.all_pass is True

    def test_protocol_violation_is_fatal(self, mock_worker_command):
        with WorkerClient(mock_worker_command) as worker:
            with pytest.raises(WorkerProtocolError):
                judge(CodeCandidate("#mock:garbage\n", "python"), SUM_CASES, FAST, worker)

    def test_mismatched_job_id_is_fatal(self, mock_worker_command):
        with WorkerClient(mock_worker_command) as worker:
            with pytest.raises(WorkerProtocolError):
                judge(CodeCandidate("#mock:wrong-id\n", "python"), SUM_CASES, FAST, worker)

    def test_empty_case_list_rejected(self, mock_worker_command):
        with WorkerClient(mock_worker_command) as worker:
            with pytest.raises(ValueError):
                judge(CodeCandidate("print(1)\n", "python"), [], FAST, worker)


class TestWorkerPool:
    def test_pool_completes_many_jobs(self, mock_worker_command):
        with WorkerPool(mock_worker_command, size=2) as pool:
            results = [
                pool.judge(CodeCandidate(SUM_PROGRAM, "python"), SUM_CASES, FAST) for _ in range(6)
            ]
        assert all(r.all_pass for r in results)

    def test_pool_size_validated(self, mock_worker_command):
        with pytest.raises(ValueError):
            WorkerPool(mock_worker_command, size=0)


class TestJudgeResult:
    def test_all_pass_is_conjunction(self):
        assert JudgeResult.from_cases([CaseStatus.PASS, CaseStatus.PASS]).all_pass
        assert not JudgeResult.from_cases([CaseStatus.PASS, CaseStatus.WRONG_OUTPUT]).all_pass
        assert not JudgeResult.from_cases([]).all_pass

    def test_limits_validated(self):
        with pytest.raises(ValueError):
            ExecutionLimits(per_case_timeout_ms=0)
