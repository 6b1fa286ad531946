"""Declarative run configuration: one TOML file drives the whole pipeline.

Sections mirror the pipeline modules. Secrets are referenced by environment
variable name only and never stored inline.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .code_judge import ExecutionLimits
from .difficulty import BudgetMode, BudgetSchedule, ScheduleError
from .filters import FilterConfig, TargetScript
from .prompts import Domain
from .sampling import SamplingParams


@dataclass
class BackendConfig:
    kind: str = "stub"  # "stub" | "http"
    endpoint: str = ""
    model: str = "stub-model"
    api_key_env: str = ""
    stub_mix: tuple[float, float, float] = (0.6, 0.2, 0.2)
    stub_plants: dict[tuple[str, int], str] = field(default_factory=dict)

    def api_key(self) -> Optional[str]:
        return os.environ.get(self.api_key_env) if self.api_key_env else None


@dataclass
class StepVerificationConfig:
    enabled: bool = False
    k: int = 5
    rule: str = "both"  # "strict" | "loose" | "both"
    critic_kind: str = "http"  # "http" | "stub"
    critic_endpoint: str = ""
    critic_model: str = ""


@dataclass
class PipelineConfig:
    seed: int = 0
    workspace: Path = Path("workspace")
    inputs: list[tuple[Domain, Path]] = field(default_factory=list)
    outputs_dir: Path = Path("outputs")
    backend: BackendConfig = field(default_factory=BackendConfig)
    sampling: SamplingParams = field(default_factory=SamplingParams)
    schedule: BudgetSchedule = field(default_factory=BudgetSchedule)
    max_in_flight: int = 16
    scorer_kind: str = "stub"  # "stub" | "remote"
    scoring_template: str = ""
    select_min_level: Optional[int] = None
    allow_unscored: bool = False
    filters: FilterConfig = field(default_factory=FilterConfig)
    limits: ExecutionLimits = field(default_factory=ExecutionLimits)
    worker_command: list[str] = field(default_factory=list)
    worker_pool_size: int = 4
    dpo_cap: int = 4
    rl_count: Optional[int] = None
    rl_fraction: Optional[float] = None
    step_verification: StepVerificationConfig = field(default_factory=StepVerificationConfig)


class ConfigError(ValueError):
    pass


def _parse_plants(raw: list) -> dict[tuple[str, int], str]:
    plants: dict[tuple[str, int], str] = {}
    for entry in raw:
        prompt_id, sample_index, kind = entry
        plants[(str(prompt_id), int(sample_index))] = str(kind)
    return plants


def load_config(path: Path | str) -> tuple[Optional[PipelineConfig], list[str]]:
    """(config, violations). The config is None when violations prevent use."""
    path = Path(path)
    violations: list[str] = []
    if not path.exists():
        return None, [f"ConfigMissing: no such file {path}"]
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (tomllib.TOMLDecodeError, OSError) as exc:
        return None, [f"ConfigUnreadable: {exc}"]

    cfg = PipelineConfig()
    base = path.parent

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    cfg.seed = int(data.get("seed", 0))

    paths = data.get("paths", {})
    cfg.workspace = resolve(str(paths.get("workspace", "workspace")))
    cfg.outputs_dir = resolve(str(paths.get("outputs", "outputs")))
    for domain in Domain:
        key = f"{domain.value}_prompts"
        if key in paths:
            p = resolve(str(paths[key]))
            if not p.exists():
                violations.append(f"InputMissing: paths.{key} = {p} does not exist")
            cfg.inputs.append((domain, p))
    if not cfg.inputs:
        violations.append("NoInputs: at least one of paths.math_prompts/code_prompts/geo_prompts is required")

    backend = data.get("backend", {})
    cfg.backend = BackendConfig(
        kind=str(backend.get("kind", "stub")),
        endpoint=str(backend.get("endpoint", "")),
        model=str(backend.get("model", "stub-model")),
        api_key_env=str(backend.get("api_key_env", "")),
        stub_mix=tuple(backend.get("stub_mix", (0.6, 0.2, 0.2))),
        stub_plants=_parse_plants(backend.get("stub_plants", [])),
    )
    if cfg.backend.kind not in ("stub", "http"):
        violations.append(f"UnknownBackendKind: {cfg.backend.kind!r}")
    if cfg.backend.kind == "http" and not cfg.backend.endpoint:
        violations.append("BackendEndpointRequired: backend.endpoint must be set for the http backend")
    if len(cfg.backend.stub_mix) != 3 or any(m < 0 for m in cfg.backend.stub_mix):
        violations.append("BadStubMix: backend.stub_mix must be three non-negative fractions")

    sampling = data.get("sampling", {})
    try:
        cfg.sampling = SamplingParams(
            n_samples=int(sampling.get("n_samples", 10)),
            temperature=float(sampling.get("temperature", 1.0)),
            max_tokens=int(sampling.get("max_tokens", 8192)),
            system_template=str(
                sampling.get("system_template", SamplingParams().system_template)
            ),
            seed_base=int(sampling.get("seed_base", cfg.seed)),
        )
    except ValueError as exc:
        violations.append(f"BadSamplingParams: {exc}")
    cfg.max_in_flight = int(sampling.get("max_in_flight", 16))
    if cfg.max_in_flight < 1:
        violations.append("BadConcurrencyCap: sampling.max_in_flight must be >= 1")
    try:
        cfg.schedule = BudgetSchedule(
            base_samples=int(sampling.get("base_samples", sampling.get("n_samples", 10))),
            mode=BudgetMode(str(sampling.get("budget_mode", "uniform"))),
            level_multipliers={int(k): int(v) for k, v in sampling.get("level_multipliers", {}).items()},
        )
    except (ScheduleError, ValueError) as exc:
        violations.append(f"BadBudgetSchedule: {exc}")

    diff = data.get("difficulty", {})
    cfg.scorer_kind = str(diff.get("scorer", "stub"))
    if cfg.scorer_kind not in ("stub", "remote"):
        violations.append(f"UnknownScorerKind: {cfg.scorer_kind!r}")
    cfg.scoring_template = str(diff.get("scoring_template", ""))
    if cfg.scorer_kind == "remote" and cfg.scoring_template and "{question}" not in cfg.scoring_template:
        violations.append("BadScoringTemplate: difficulty.scoring_template needs a {question} placeholder")
    if "select_min_level" in diff:
        cfg.select_min_level = int(diff["select_min_level"])
        if not 1 <= cfg.select_min_level <= 10:
            violations.append("BadMinLevel: difficulty.select_min_level must be in 1..10")
    cfg.allow_unscored = bool(diff.get("allow_unscored", False))

    filters = data.get("filters", {})
    try:
        cfg.filters = FilterConfig(
            ngram_window=int(filters.get("ngram_window", 32)),
            max_ngram_repeats=int(filters.get("max_ngram_repeats", 4)),
            target_script=TargetScript(str(filters.get("target_script", "latin"))),
            max_foreign_char_ratio=float(filters.get("max_foreign_char_ratio", 0.2)),
            reflective_markers=tuple(
                filters.get("reflective_markers", FilterConfig().reflective_markers)
            ),
            max_wait_marker_count=int(filters.get("max_wait_marker_count", 8)),
        )
    except ValueError as exc:
        violations.append(f"BadFilterConfig: {exc}")

    limits = data.get("limits", {})
    try:
        cfg.limits = ExecutionLimits(
            per_case_timeout_ms=int(limits.get("per_case_timeout_ms", 10_000)),
            memory_limit_mb=int(limits.get("memory_limit_mb", 512)),
            max_output_bytes=int(limits.get("max_output_bytes", 1_000_000)),
        )
    except ValueError as exc:
        violations.append(f"BadExecutionLimits: {exc}")

    judge = data.get("judge", {})
    cfg.worker_command = [str(part) for part in judge.get("worker_command", [])]
    cfg.worker_pool_size = int(judge.get("pool_size", 4))
    if cfg.worker_pool_size < 1:
        violations.append("BadPoolSize: judge.pool_size must be >= 1")
    if any(domain is Domain.CODE for domain, _ in cfg.inputs) and not cfg.worker_command:
        violations.append("WorkerCommandRequired: judge.worker_command is required for code inputs")

    datasets = data.get("datasets", {})
    cfg.dpo_cap = int(datasets.get("dpo_cap", 4))
    if cfg.dpo_cap < 1:
        violations.append("CapMustBePositive: datasets.dpo_cap must be >= 1")
    if "rl_count" in datasets:
        cfg.rl_count = int(datasets["rl_count"])
        if cfg.rl_count < 0:
            violations.append("BadRlCount: datasets.rl_count must be >= 0")
    if "rl_fraction" in datasets:
        cfg.rl_fraction = float(datasets["rl_fraction"])
        if not 0.0 <= cfg.rl_fraction <= 1.0:
            violations.append("BadRlFraction: datasets.rl_fraction must be in [0, 1]")
    if cfg.rl_count is not None and cfg.rl_fraction is not None:
        violations.append("RlSubsetAmbiguous: set only one of datasets.rl_count / datasets.rl_fraction")
    if cfg.rl_count is None and cfg.rl_fraction is None:
        cfg.rl_fraction = 1.0

    sv = data.get("step_verification", {})
    cfg.step_verification = StepVerificationConfig(
        enabled=bool(sv.get("enabled", False)),
        k=int(sv.get("k", 5)),
        rule=str(sv.get("rule", "both")),
        critic_kind=str(sv.get("critic_kind", "http")),
        critic_endpoint=str(sv.get("critic_endpoint", "")),
        critic_model=str(sv.get("critic_model", "")),
    )
    if cfg.step_verification.k < 1:
        violations.append("BadVoteCount: step_verification.k must be >= 1")
    if cfg.step_verification.rule not in ("strict", "loose", "both"):
        violations.append(f"BadRule: step_verification.rule {cfg.step_verification.rule!r}")
    if (
        cfg.step_verification.enabled
        and cfg.step_verification.critic_kind == "http"
        and not cfg.step_verification.critic_endpoint
    ):
        violations.append("CriticEndpointRequired: step_verification.critic_endpoint must be set")

    return (cfg if not violations else None), violations


def validate_config(path: Path | str) -> list[str]:
    _, violations = load_config(path)
    return violations
