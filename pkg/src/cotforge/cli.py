"""Command-line entry point.

Exit codes: 0 success, 1 stage failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from . import datasets, pipeline
from .config import load_config, validate_config

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2

_VERB_STAGES = {
    "ingest": "ingest",
    "score": "score",
    "sample": "sample",
    "filter": "filter",
    "verify": "verify",
    "reward": "reward",
    "build-sft": "build",
    "build-dpo": "build",
    "build-rl": "build",
    "verify-steps": "verify-steps",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotforge",
        description="Curate verified long chain-of-thought training datasets.",
    )
    parser.add_argument("--config", type=Path, required=True, help="path to the run config (TOML)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--workspace", type=Path, default=None, help="override the workspace directory")
    parser.add_argument(
        "--allow-unscored",
        action="store_true",
        help="tolerate unscored prompts in selection and budgeting",
    )
    parser.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in _VERB_STAGES:
        sub.add_parser(verb, help=f"run the {verb} stage")
    run = sub.add_parser("run", help="run the full pipeline in stage order")
    run.add_argument("--stage", action="append", default=None, help="run only this stage (repeatable)")
    sub.add_parser("stats", help="print the curation funnel for the current workspace")
    sub.add_parser("validate", help="validate the config and exit")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.verb == "validate":
        violations = validate_config(args.config)
        for v in violations:
            print(v, file=sys.stderr)
        return EXIT_CONFIG_ERROR if violations else EXIT_OK

    cfg, violations = load_config(args.config)
    if violations:
        for v in violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    assert cfg is not None
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workspace is not None:
        cfg.workspace = args.workspace
    if args.allow_unscored:
        cfg.allow_unscored = True

    pipe = pipeline.Pipeline(cfg)
    try:
        if args.verb == "stats":
            print(datasets.format_stats(pipe.compute_stats()))
            return EXIT_OK
        if args.verb == "run":
            stats = pipe.run(stages=args.stage)
            print(datasets.format_stats(stats))
            return EXIT_OK
        pipe.run_stage(_VERB_STAGES[args.verb])
        return EXIT_OK
    except pipeline.StageDependencyError as exc:
        print(f"stage dependency unmet: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE
    except Exception as exc:  # stage failures keep prior outputs intact
        logging.getLogger(__name__).error("stage failed: %s", exc)
        return EXIT_STAGE_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
