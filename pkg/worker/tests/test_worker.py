"""Secondary acceptance: drive the worker process over its line protocol."""

from __future__ import annotations

import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

from sandbox_worker.runner import outputs_match

SUM_PROGRAM = "import sys\nvalues = [int(t) for t in sys.stdin.read().split()]\nprint(sum(values))\n"

LIMITS = {"per_case_timeout_ms": 5000, "memory_limit_mb": 512, "max_output_bytes": 100_000}


def make_job(job_id, source, cases, limits=None):
    return {
        "job_id": job_id,
        "source": source,
        "language_hint": "python",
        "cases": cases,
        "limits": limits or LIMITS,
    }


def case(inp, expected, mode="trimmed_lines"):
    return {"input": inp, "expected_output": expected, "compare_mode": mode}


@pytest.fixture
def worker():
    proc = subprocess.Popen(
        [sys.executable, "-m", "sandbox_worker"],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
        bufsize=1,
    )
    yield proc
    proc.stdin.close()
    proc.wait(timeout=10)


def round_trip(proc, job):
    proc.stdin.write(json.dumps(job) + "\n")
    proc.stdin.flush()
    line = proc.stdout.readline()
    assert line, "worker produced no report"
    return json.loads(line)


class TestAcceptance:
    def test_sum_program_passes_three_cases(self, worker):
        cases = [case("1 2\n", "3\n"), case("10 20\n", "30\n"), case("-4 4\n", "0\n")]
        report = round_trip(worker, make_job("j-sum", SUM_PROGRAM, cases))
        assert report["job_id"] == "j-sum"
        assert [r[0] for r in report["case_results"]] == ["pass", "pass", "pass"]
        assert report["all_pass"] is True

    def test_constant_program_fails(self, worker):
        cases = [case("1 2\n", "3\n"), case("10 20\n", "30\n"), case("-4 4\n", "0\n")]
        report = round_trip(worker, make_job("j-const", "print(7)\n", cases))
        assert report["all_pass"] is False
        assert "wrong_output" in [r[0] for r in report["case_results"]]

    def test_infinite_loop_killed_within_grace(self, worker):
        limits = dict(LIMITS, per_case_timeout_ms=1000)
        job = make_job("j-loop", "while True: pass\n", [case("", "x\n")], limits)
        start = time.monotonic()
        report = round_trip(worker, job)
        elapsed = time.monotonic() - start
        assert report["case_results"][0][0] == "timeout"
        assert elapsed <= 1.0 + 0.5, f"kill took {elapsed:.2f}s"

    def test_one_report_line_per_job_line_in_order(self, worker):
        jobs = [make_job(f"j-{i}", SUM_PROGRAM, [case("1 1\n", "2\n")]) for i in range(3)]
        for job in jobs:
            worker.stdin.write(json.dumps(job) + "\n")
        worker.stdin.flush()
        ids = [json.loads(worker.stdout.readline())["job_id"] for _ in jobs]
        assert ids == ["j-0", "j-1", "j-2"]


class TestClassification:
    def test_raising_program_is_runtime_error(self, worker):
        report = round_trip(worker, make_job("j-err", "raise ValueError('x')\n", [case("", "1\n")]))
        assert report["case_results"][0][0] == "runtime_error"

    def test_output_beyond_cap_is_truncated(self, worker):
        limits = dict(LIMITS, max_output_bytes=1000)
        source = "print('y' * 100000)\n"
        report = round_trip(worker, make_job("j-big", source, [case("", "y\n")], limits))
        assert report["case_results"][0][0] == "output_truncated"

    def test_memory_hog_is_runtime_error(self, worker):
        limits = dict(LIMITS, memory_limit_mb=128)
        source = "x = bytearray(512 * 1024 * 1024)\nprint('made it')\n"
        report = round_trip(worker, make_job("j-mem", source, [case("", "made it\n")], limits))
        assert report["case_results"][0][0] == "runtime_error"

    def test_exact_mode_is_byte_strict(self, worker):
        source = "print('3 ')\n"
        report = round_trip(worker, make_job("j-ws", source, [case("", "3\n", mode="exact")]))
        assert report["case_results"][0][0] == "wrong_output"
        report = round_trip(worker, make_job("j-ws2", source, [case("", "3\n", mode="trimmed_lines")]))
        assert report["case_results"][0][0] == "pass"

    def test_timeout_case_does_not_poison_later_cases(self, worker):
        source = (
            "import sys\n"
            "data = sys.stdin.read().strip()\n"
            "if data == 'loop':\n"
            "    while True: pass\n"
            "print(data)\n"
        )
        limits = dict(LIMITS, per_case_timeout_ms=1000)
        cases = [case("loop", "x\n"), case("ok", "ok\n")]
        report = round_trip(worker, make_job("j-iso", source, cases, limits))
        assert [r[0] for r in report["case_results"]] == ["timeout", "pass"]

    def test_output_prefix_reported(self, worker):
        report = round_trip(worker, make_job("j-pre", "print('hello world')\n", [case("", "nope\n")]))
        status, prefix = report["case_results"][0]
        assert status == "wrong_output"
        assert prefix.startswith("hello world")


class TestProtocolEdges:
    def test_malformed_job_line_reports_unknown(self, worker):
        worker.stdin.write("{broken json\n")
        worker.stdin.flush()
        report = json.loads(worker.stdout.readline())
        assert report["job_id"] == "unknown"
        assert report["all_pass"] is False
        assert "error" in report

    def test_job_missing_fields_reports_unknown(self, worker):
        worker.stdin.write(json.dumps({"job_id": "j-x"}) + "\n")
        worker.stdin.flush()
        report = json.loads(worker.stdout.readline())
        assert report["job_id"] == "unknown"

    def test_worker_survives_bad_line_then_serves(self, worker):
        worker.stdin.write("not json\n")
        worker.stdin.flush()
        assert json.loads(worker.stdout.readline())["job_id"] == "unknown"
        report = round_trip(worker, make_job("j-after", SUM_PROGRAM, [case("2 3\n", "5\n")]))
        assert report["all_pass"] is True

    def test_missing_interpreter_is_runtime_error_with_diagnostic(self):
        proc = subprocess.Popen(
            [sys.executable, "-m", "sandbox_worker", "--interpreter", "/no/such/python"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        try:
            job = make_job("j-noint", SUM_PROGRAM, [case("1 1\n", "2\n"), case("2 2\n", "4\n")])
            proc.stdin.write(json.dumps(job) + "\n")
            proc.stdin.flush()
            report = json.loads(proc.stdout.readline())
            statuses = [r[0] for r in report["case_results"]]
            assert statuses == ["runtime_error", "runtime_error"]
            assert "interpreter unavailable" in report["case_results"][0][1]
        finally:
            proc.stdin.close()
            proc.wait(timeout=10)


class TestScratchIsolation:
    def test_cases_run_in_disjoint_scratch_dirs_that_are_removed(self, worker):
        source = "import os\nprint(os.getcwd())\n"
        cases = [case("", "ignored\n"), case("", "ignored\n")]
        report = round_trip(worker, make_job("j-cwd", source, cases))
        dirs = [r[1].strip() for r in report["case_results"]]
        assert dirs[0] != dirs[1]
        for d in dirs:
            assert "sbx-case-" in d
            assert not Path(d).exists()

    def test_files_written_by_candidate_are_cleaned_up(self, worker):
        source = "open('artifact.txt', 'w').write('x')\nprint('done')\n"
        report = round_trip(worker, make_job("j-files", source, [case("", "done\n")]))
        assert report["case_results"][0][0] == "pass"


def test_outputs_match_semantics():
    assert outputs_match("3\n", "3\n", "exact")
    assert not outputs_match("3", "3\n", "exact")
    assert outputs_match("3  \n\n", "3\n", "trimmed_lines")
    assert not outputs_match("a\n\nb", "a\nb", "trimmed_lines")
