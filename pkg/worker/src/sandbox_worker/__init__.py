"""Sandbox worker: one candidate program per job, one report line per job line.

Job line (stdin):  {"job_id", "source", "language_hint", "cases": [{"input",
"expected_output", "compare_mode"}], "limits": {"per_case_timeout_ms",
"memory_limit_mb", "max_output_bytes"}}
Report line (stdout): {"job_id", "case_results": [[status, output_prefix],
...], "all_pass"}

Statuses: pass, wrong_output, timeout, runtime_error, output_truncated.
Candidate code is untrusted: timeouts are enforced by hard process kill,
each case runs in its own scratch directory, and the address space is
capped. This is process-level isolation, not a hardened public judge.
"""

from .runner import run_job

__all__ = ["run_job"]
__version__ = "0.1.0"
