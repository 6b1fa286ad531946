"""Worker entry point: one JSON job per stdin line, one JSON report per line."""

from __future__ import annotations

import argparse
import json
import shlex
import sys

from .runner import run_job


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sandbox-worker", description=__doc__)
    parser.add_argument(
        "--interpreter",
        default=sys.executable,
        help="command used to run candidate programs (shell-style string)",
    )
    args = parser.parse_args(argv)
    interpreter = shlex.split(args.interpreter)

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            job = json.loads(line)
            report = run_job(job, interpreter)
        except (ValueError, KeyError, TypeError) as exc:
            report = {
                "job_id": "unknown",
                "error": f"malformed job line: {exc}",
                "case_results": [],
                "all_pass": False,
            }
        sys.stdout.write(json.dumps(report, ensure_ascii=False) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
