from __future__ import annotations

import sys
from pathlib import Path

import pytest

from cotforge.prompts import Domain, Prompt, TestCase

TESTS_DIR = Path(__file__).parent
FIXTURES_DIR = TESTS_DIR.parent / "fixtures"
MOCK_WORKER = [sys.executable, str(TESTS_DIR / "mock_worker.py")]


def make_math_prompt(pid: str = "m1", text: str = "What is 6*7?", answer: str = "42", level: int | None = 5) -> Prompt:
    return Prompt(
        id=pid,
        domain=Domain.MATH,
        text=text,
        reference_answer=answer,
        difficulty_level=level,
        source="test",
    )


def make_code_prompt(pid: str = "c1", n_cases: int = 3) -> Prompt:
    cases = tuple(
        TestCase(input=f"{i} {i + 1}\n", expected_output=f"{2 * i + 1}\n") for i in range(n_cases)
    )
    return Prompt(
        id=pid,
        domain=Domain.CODE,
        text="Read two integers from stdin and print their sum.",
        test_cases=cases,
        difficulty_level=6,
        source="test",
    )


@pytest.fixture
def mock_worker_command() -> list[str]:
    return list(MOCK_WORKER)


# one pass/fail line per acceptance criterion, printed after the run
_ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    if "test_acceptance" in str(item.fspath):
        label = item.function.__doc__ or item.name
        _ACCEPTANCE_RESULTS[label.strip().splitlines()[0]] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in _ACCEPTANCE_RESULTS.items():
        marker = "PASS" if outcome == "PASSED" else outcome
        terminalreporter.write_line(f"[{marker}] {label}")
