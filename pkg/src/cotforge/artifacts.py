"""Canonical artifact layout of a pipeline run."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class RunPaths:
    workspace: Path
    outputs: Path

    @property
    def prompts(self) -> Path:
        return self.workspace / "prompts.jsonl"

    @property
    def ingest_report(self) -> Path:
        return self.workspace / "ingest_report.json"

    @property
    def prompts_scored(self) -> Path:
        return self.workspace / "prompts_scored.jsonl"

    @property
    def score_report(self) -> Path:
        return self.workspace / "score_report.json"

    @property
    def completions(self) -> Path:
        return self.workspace / "completions.jsonl"

    @property
    def completions_done(self) -> Path:
        return self.workspace / "completions.jsonl.done"

    @property
    def filtered(self) -> Path:
        return self.workspace / "completions_filtered.jsonl"

    @property
    def verified(self) -> Path:
        return self.workspace / "completions_verified.jsonl"

    @property
    def labeled(self) -> Path:
        return self.workspace / "completions_labeled.jsonl"

    @property
    def run_state(self) -> Path:
        return self.workspace / "run_state.json"

    @property
    def sft(self) -> Path:
        return self.outputs / "sft.jsonl"

    @property
    def dpo(self) -> Path:
        return self.outputs / "dpo.jsonl"

    @property
    def rl(self) -> Path:
        return self.outputs / "rl.jsonl"

    @property
    def stats_json(self) -> Path:
        return self.outputs / "stats.json"

    @property
    def stats_report(self) -> Path:
        return self.outputs / "stats.txt"

    @property
    def sft_strict(self) -> Path:
        return self.outputs / "sft_strict.jsonl"

    @property
    def sft_loose(self) -> Path:
        return self.outputs / "sft_loose.jsonl"

    @property
    def step_verify_marker(self) -> Path:
        return self.outputs / "step_verify_skipped.json"
