"""Stage orchestration: ingest -> score -> sample -> filter -> verify ->
reward -> build, plus the optional step-verify stage.

Every stage persists its outputs before the next starts (atomic
write-then-rename), and a run-state file keyed by content hashes makes
reruns skip stages whose config and inputs are unchanged. The sampling
stage is additionally resumable per prompt through the completion store's
done markers.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Callable, Optional

from . import datasets, filters, jsonl, math_answers, rewards, step_verify
from .artifacts import RunPaths
from .code_judge import ExecutionLimits, WorkerPool, extract_code
from .config import PipelineConfig
from .difficulty import (
    BudgetMode,
    RemoteScorer,
    StubScorer,
    UnscoredPromptError,
    sample_budget,
    score_prompts,
    select_for_augmentation,
)
from .prompts import Domain, Prompt, PromptSet, dedupe_prompts, ingest_prompts, merge_prompt_sets
from .sampling import (
    Completion,
    CompletionStore,
    HttpBackend,
    StubBackend,
    run_sampling,
)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "score", "sample", "filter", "verify", "reward", "build", "verify-steps")


class StageDependencyError(RuntimeError):
    pass


class StageFailure(RuntimeError):
    pass


def _digest_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.paths = RunPaths(workspace=cfg.workspace, outputs=cfg.outputs_dir)
        self.paths.workspace.mkdir(parents=True, exist_ok=True)
        self.paths.outputs.mkdir(parents=True, exist_ok=True)

    # -- run state ---------------------------------------------------------

    def _state(self) -> dict:
        if self.paths.run_state.exists():
            return json.loads(self.paths.run_state.read_text())
        return {}

    def _save_state(self, state: dict) -> None:
        self.paths.run_state.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.paths.run_state.with_suffix(".tmp")
        tmp.write_text(json.dumps(state, indent=2, sort_keys=True))
        tmp.replace(self.paths.run_state)

    def _stage_hash(self, stage: str) -> str:
        cfg = self.cfg
        section: dict
        deps: list[Path] = []
        if stage == "ingest":
            section = {"inputs": [(d.value, str(p)) for d, p in cfg.inputs]}
            deps = [p for _, p in cfg.inputs]
        elif stage == "score":
            section = {
                "scorer": cfg.scorer_kind,
                "template": cfg.scoring_template,
                "allow_unscored": cfg.allow_unscored,
            }
            deps = [self.paths.prompts]
        elif stage == "sample":
            section = {
                "backend": {
                    "kind": cfg.backend.kind,
                    "endpoint": cfg.backend.endpoint,
                    "model": cfg.backend.model,
                    "mix": cfg.backend.stub_mix,
                    "plants": sorted((p, i, k) for (p, i), k in cfg.backend.stub_plants.items()),
                },
                "sampling": {
                    "n_samples": cfg.sampling.n_samples,
                    "temperature": cfg.sampling.temperature,
                    "max_tokens": cfg.sampling.max_tokens,
                    "system_template": cfg.sampling.system_template,
                    "seed_base": cfg.sampling.seed_base,
                },
                "schedule": {
                    "base": cfg.schedule.base_samples,
                    "mode": cfg.schedule.mode.value,
                    "multipliers": sorted(cfg.schedule.level_multipliers.items()),
                },
                "select_min_level": cfg.select_min_level,
                "allow_unscored": cfg.allow_unscored,
                "seed": cfg.seed,
            }
            deps = [self.paths.prompts_scored]
        elif stage == "filter":
            section = {
                "ngram_window": cfg.filters.ngram_window,
                "max_ngram_repeats": cfg.filters.max_ngram_repeats,
                "target_script": cfg.filters.target_script.value,
                "max_foreign_char_ratio": cfg.filters.max_foreign_char_ratio,
                "reflective_markers": list(cfg.filters.reflective_markers),
                "max_wait_marker_count": cfg.filters.max_wait_marker_count,
            }
            deps = [self.paths.completions]
        elif stage == "verify":
            section = {"limits": cfg.limits.to_record(), "worker": cfg.worker_command, "pool": cfg.worker_pool_size}
            deps = [self.paths.filtered]
        elif stage == "reward":
            section = {}
            deps = [self.paths.verified]
        elif stage == "build":
            section = {"dpo_cap": cfg.dpo_cap, "rl_count": cfg.rl_count, "rl_fraction": cfg.rl_fraction, "seed": cfg.seed}
            deps = [self.paths.labeled, self.paths.prompts_scored]
        elif stage == "verify-steps":
            sv = cfg.step_verification
            section = {"k": sv.k, "rule": sv.rule, "critic": (sv.critic_kind, sv.critic_endpoint, sv.critic_model)}
            deps = [self.paths.labeled]
        else:
            raise ValueError(f"unknown stage {stage!r}")
        missing = [p for p in deps if not p.exists()]
        if missing:
            raise StageDependencyError(f"stage {stage!r} dependency unmet: {missing[0]}")
        return _digest_obj({"section": section, "inputs": [_digest_file(p) for p in deps]})

    def _stage_outputs(self, stage: str) -> list[Path]:
        p = self.paths
        return {
            "ingest": [p.prompts, p.ingest_report],
            "score": [p.prompts_scored, p.score_report],
            "sample": [p.completions, p.completions_done],
            "filter": [p.filtered],
            "verify": [p.verified],
            "reward": [p.labeled],
            "build": [p.sft, p.dpo, p.rl, p.stats_json, p.stats_report],
            "verify-steps": [],
        }[stage]

    def run_stage(self, stage: str, force: bool = False) -> bool:
        """Run one stage; returns False when skipped as up to date."""
        current = self._stage_hash(stage)
        state = self._state()
        outputs = self._stage_outputs(stage)
        if (
            not force
            and state.get(stage) == current
            and all(path.exists() for path in outputs)
        ):
            logger.info("stage %s is up to date; skipping", stage)
            return False
        if stage == "sample" and state.get("sample") not in (None, current):
            # config or inputs changed: stale partial blocks must not leak in
            self.paths.completions.unlink(missing_ok=True)
            self.paths.completions_done.unlink(missing_ok=True)
        getattr(self, "_stage_" + stage.replace("-", "_"))()
        state[stage] = current
        self._save_state(state)
        return True

    def run(self, stages: Optional[list[str]] = None) -> datasets.CurationStats:
        selected = list(stages) if stages else [s for s in STAGES if s != "verify-steps"]
        if stages is None and self.cfg.step_verification.enabled:
            selected.append("verify-steps")
        for stage in selected:
            if stage not in STAGES:
                raise ValueError(f"unknown stage {stage!r}")
            self.run_stage(stage)
        return self.compute_stats()

    # -- stages ------------------------------------------------------------

    def _stage_ingest(self) -> None:
        sets = [ingest_prompts(path, domain) for domain, path in self.cfg.inputs]
        merged = merge_prompt_sets(sets)
        deduped = dedupe_prompts(merged)
        from .prompts import write_prompts

        write_prompts(deduped, self.paths.prompts)
        report = {
            "ingested": len(merged),
            "deduped": len(deduped),
            "sources": merged.manifest.source_paths,
            "ingested_at": merged.manifest.ingested_at,
            "skipped": [{"line_no": s.line_no, "reason": s.reason} for s in merged.manifest.skipped],
        }
        jsonl.write_json_atomic(self.paths.ingest_report, report)

    def _load_prompts(self, path: Path) -> PromptSet:
        records = jsonl.read_jsonl(path)
        return PromptSet.build([Prompt.from_record(r) for r in records], source_paths=[str(path)])

    def _stage_score(self) -> None:
        pset = self._load_prompts(self.paths.prompts)
        if self.cfg.scorer_kind == "remote":
            backend = self._build_backend(pset)
            scorer = (
                RemoteScorer(backend, self.cfg.scoring_template)
                if self.cfg.scoring_template
                else RemoteScorer(backend)
            )
        else:
            scorer = StubScorer()
        scored, unscored = score_prompts(pset, scorer, max_in_flight=self.cfg.max_in_flight)
        from .prompts import write_prompts

        write_prompts(scored, self.paths.prompts_scored)
        jsonl.write_json_atomic(
            self.paths.score_report, {"scored": len(scored) - len(unscored), "unscored": unscored}
        )

    def _build_backend(self, pset: PromptSet):
        if self.cfg.backend.kind == "stub":
            return StubBackend.from_prompts(
                pset,
                mix=self.cfg.backend.stub_mix,
                seed=self.cfg.seed,
                plants=self.cfg.backend.stub_plants,
            )
        return HttpBackend(
            endpoint=self.cfg.backend.endpoint,
            model=self.cfg.backend.model,
            api_key=self.cfg.backend.api_key(),
        )

    def _budget_of(self) -> Callable[[Prompt], int]:
        sched = self.cfg.schedule

        def budget(prompt: Prompt) -> int:
            if sched.mode is BudgetMode.UNIFORM:
                return sched.base_samples
            if prompt.difficulty_level is None:
                if self.cfg.allow_unscored:
                    return sched.base_samples
                raise UnscoredPromptError([prompt.id])
            return sample_budget(prompt.difficulty_level, sched)

        return budget

    def _stage_sample(self) -> None:
        pset = self._load_prompts(self.paths.prompts_scored)
        if self.cfg.select_min_level is not None:
            pset = select_for_augmentation(pset, self.cfg.select_min_level, self.cfg.allow_unscored)
        backend = self._build_backend(pset)
        store = CompletionStore(self.paths.completions)
        run_sampling(pset, self.cfg.sampling, self._budget_of(), backend, store)

    def _domains(self) -> dict[str, Domain]:
        pset = self._load_prompts(self.paths.prompts_scored)
        return {p.id: p.domain for p in pset}

    def _stage_filter(self) -> None:
        domains = self._domains()
        store = CompletionStore(self.paths.completions)
        rows = []
        for prompt_id, block in store.load().items():
            domain = domains.get(prompt_id)
            if domain is None:
                raise StageFailure(f"completion for unknown prompt {prompt_id!r}")
            for completion in block:
                verdict = filters.apply_filters(completion, domain, self.cfg.filters)
                eligible = filters.eligible_for_verification(
                    verdict, finish_reason_error=completion.finish_reason.value == "error"
                )
                rows.append({**completion.to_record(), **verdict.to_record(), "eligible": eligible})
        jsonl.write_jsonl(self.paths.filtered, rows)

    def _stage_verify(self) -> None:
        pset = self._load_prompts(self.paths.prompts_scored)
        index = pset.by_id()
        records = [r for r in jsonl.read_jsonl(self.paths.filtered) if r["eligible"]]
        needs_worker = any(index[r["prompt_id"]].domain is Domain.CODE for r in records)
        pool: Optional[WorkerPool] = None
        if needs_worker:
            if not self.cfg.worker_command:
                raise StageFailure("code completions present but judge.worker_command is not configured")
            pool = WorkerPool(self.cfg.worker_command, size=self.cfg.worker_pool_size)
        rows = []
        try:
            for rec in records:
                prompt = index[rec["prompt_id"]]
                rows.append(self._verify_record(rec, prompt, pool, self.cfg.limits))
        finally:
            if pool is not None:
                pool.close()
        jsonl.write_jsonl(self.paths.verified, rows)

    @staticmethod
    def _verify_record(rec: dict, prompt: Prompt, pool: Optional[WorkerPool], limits: ExecutionLimits) -> dict:
        if prompt.domain is Domain.CODE:
            candidate = extract_code(rec["text"])
            if candidate is None:
                outcome = math_answers.VerifierOutcome.NO_VALID_FORMAT
                extracted = None
            else:
                assert pool is not None
                result = pool.judge(candidate, list(prompt.test_cases or ()), limits)
                outcome = rewards.outcome_from_judge(result)
                extracted = candidate.source
            return {**rec, "outcome": outcome.value, "extracted": extracted, "normalized": None}
        if not prompt.reference_answer:
            raise StageFailure(f"prompt {prompt.id!r} has no reference answer")
        extraction = math_answers.extract_final_answer(rec["text"])
        outcome = math_answers.verify_text(rec["text"], prompt.reference_answer)
        normalized = (
            math_answers.normalize(extraction.raw).canonical_string() if extraction is not None else None
        )
        return {
            **rec,
            "outcome": outcome.value,
            "extracted": extraction.raw if extraction else None,
            "normalized": normalized,
        }

    def _stage_reward(self) -> None:
        records = jsonl.read_jsonl(self.paths.verified)
        labeled, _counts = rewards.label_store(records)
        jsonl.write_jsonl(self.paths.labeled, labeled)

    def _stage_build(self) -> None:
        pset = self._load_prompts(self.paths.prompts_scored)
        index = pset.by_id()
        labeled = jsonl.read_jsonl(self.paths.labeled)
        positives, negatives = datasets.split_pos_neg(labeled)
        sft = datasets.build_sft(positives, index)
        dpo = datasets.build_dpo_pairs(positives, negatives, index, cap=self.cfg.dpo_cap)
        rl = datasets.build_rl_prompts(
            sft, index, count=self.cfg.rl_count, fraction=self.cfg.rl_fraction, seed=self.cfg.seed
        )
        jsonl.write_jsonl(self.paths.sft, (r.to_line() for r in sft))
        jsonl.write_jsonl(self.paths.dpo, (p.to_line() for p in dpo))
        jsonl.write_jsonl(self.paths.rl, (r.to_line() for r in rl))
        stats = self.compute_stats()
        jsonl.write_json_atomic(self.paths.stats_json, stats.to_record())
        jsonl.write_text_atomic(self.paths.stats_report, datasets.format_stats(stats) + "\n")

    def _build_critic(self) -> step_verify.Critic:
        sv = self.cfg.step_verification
        if sv.critic_kind == "stub":
            return _StubCritic()
        backend = HttpBackend(endpoint=sv.critic_endpoint, model=sv.critic_model or self.cfg.backend.model)
        return step_verify.BackendCritic(backend)

    def _stage_verify_steps(self) -> None:
        sv = self.cfg.step_verification
        labeled = jsonl.read_jsonl(self.paths.labeled)
        critic = self._build_critic()
        try:
            strict_set, loose_set = step_verify.build_verified_subsets(
                labeled, critic, k=sv.k, max_in_flight=self.cfg.max_in_flight
            )
        except step_verify.CriticUnavailableError as exc:
            logger.warning("critic unavailable; step verification skipped: %s", exc)
            jsonl.write_json_atomic(self.paths.step_verify_marker, {"skipped": True, "reason": str(exc)})
            self.paths.sft_strict.unlink(missing_ok=True)
            self.paths.sft_loose.unlink(missing_ok=True)
            return
        self.paths.step_verify_marker.unlink(missing_ok=True)
        if sv.rule in ("strict", "both"):
            jsonl.write_jsonl(
                self.paths.sft_strict, ({**r, "step_verified": "strict"} for r in strict_set)
            )
        if sv.rule in ("loose", "both"):
            jsonl.write_jsonl(self.paths.sft_loose, ({**r, "step_verified": "loose"} for r in loose_set))

    # -- stats -------------------------------------------------------------

    def compute_stats(self) -> datasets.CurationStats:
        return compute_stats(self.paths)


class _StubCritic:
    """Deterministic offline critic: compacts by sentence-splitting and
    always votes no error. Lets stub-backend desk runs exercise the stage."""

    def compact(self, key: str, cot_text: str) -> str:
        sentences = [s.strip() for s in cot_text.replace("\n", " ").split(".") if s.strip()]
        steps = sentences[:4] or ["restate the problem"]
        return "\n".join(f"{i + 1}. {s}" for i, s in enumerate(steps))

    def vote(self, key: str, iteration: int, solution_text: str) -> str:
        return step_verify.NO_ERROR_TOKEN


def compute_stats(paths: RunPaths) -> datasets.CurationStats:
    """Assemble the funnel from whatever artifacts exist."""
    stats = datasets.CurationStats()
    if paths.ingest_report.exists():
        report = json.loads(paths.ingest_report.read_text())
        stats.ingested = report.get("ingested", 0)
        stats.deduped = report.get("deduped", 0)
    if paths.score_report.exists():
        report = json.loads(paths.score_report.read_text())
        stats.scored = report.get("scored", 0)
    if paths.completions.exists():
        store = CompletionStore(paths.completions)
        stats.sampled = sum(len(block) for block in store.load().values())
    if paths.verified.exists():
        for rec in jsonl.iter_jsonl(paths.verified):
            stats.filter_passed += 1
            outcome = rec.get("outcome")
            if outcome == math_answers.VerifierOutcome.TRUE.value:
                stats.verified_true += 1
            elif outcome == math_answers.VerifierOutcome.FALSE.value:
                stats.verified_false += 1
            elif outcome == math_answers.VerifierOutcome.NO_VALID_FORMAT.value:
                stats.no_valid_format += 1
    for attr, path in (("sft_records", paths.sft), ("dpo_pairs", paths.dpo), ("rl_prompts", paths.rl)):
        if path.exists():
            setattr(stats, attr, sum(1 for _ in jsonl.iter_jsonl(path)))
    if paths.sft_strict.exists():
        stats.strict_verified = sum(1 for _ in jsonl.iter_jsonl(paths.sft_strict))
    if paths.sft_loose.exists():
        stats.loose_verified = sum(1 for _ in jsonl.iter_jsonl(paths.sft_loose))
    stats.validate()
    return stats
