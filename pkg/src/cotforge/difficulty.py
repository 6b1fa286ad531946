"""Difficulty levels: bucket mapping, pluggable scorers, sampling budgets.

Levels are integers 1..10. The experimental buckets cover 3..9 only
(Low = 3, Medium = 4..6, High = 7..9); levels 1, 2, and 10 are representable
but belong to no bucket.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol

from .prompts import Prompt, PromptSet
from .sampling import Backend, BackendError, BoundedRunner, CompletionRequest, stable_hash


class BucketName(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class DifficultyBucket:
    name: BucketName
    level_range: tuple[int, int]

    def contains(self, level: int) -> bool:
        lo, hi = self.level_range
        return lo <= level <= hi


BUCKETS: tuple[DifficultyBucket, ...] = (
    DifficultyBucket(BucketName.LOW, (3, 3)),
    DifficultyBucket(BucketName.MEDIUM, (4, 6)),
    DifficultyBucket(BucketName.HIGH, (7, 9)),
)


def bucket_of(level: int) -> Optional[DifficultyBucket]:
    """The unique bucket containing `level`, or None for 1, 2, and 10."""
    if not 1 <= level <= 10:
        raise ValueError(f"difficulty level must be in 1..10, got {level}")
    for bucket in BUCKETS:
        if bucket.contains(level):
            return bucket
    return None


class ScorerError(Exception):
    pass


class ScorerParseError(ScorerError):
    """The scorer replied with something that is not a level in 1..10."""


class ScorerUnavailableError(ScorerError):
    """Transport-level failure after retries; the stage should abort."""


class DifficultyScorer(Protocol):
    def score(self, prompt: Prompt) -> int: ...


class StubScorer:
    """Offline deterministic scorer: passes through an existing level, else
    derives one from a stable hash of the prompt text."""

    def score(self, prompt: Prompt) -> int:
        if prompt.difficulty_level is not None:
            return prompt.difficulty_level
        return 1 + stable_hash("difficulty", prompt.text) % 10


DEFAULT_SCORING_TEMPLATE = (
    "Rate the difficulty of the following problem on an integer scale from 1 "
    "(trivial) to 10 (research level). Reply with the single integer only.\n\n{question}"
)


class RemoteScorer:
    """One chat call per prompt; the reply must parse as a single integer 1..10."""

    def __init__(self, backend: Backend, template: str = DEFAULT_SCORING_TEMPLATE, max_tokens: int = 8):
        if "{question}" not in template:
            raise ValueError("scoring template must contain a {question} placeholder")
        self.backend = backend
        self.template = template
        self.max_tokens = max_tokens

    def score(self, prompt: Prompt) -> int:
        request = CompletionRequest(
            prompt_id=f"difficulty:{prompt.id}",
            sample_index=0,
            n_total=1,
            messages=({"role": "user", "content": self.template.format(question=prompt.text)},),
            temperature=0.0,
            max_tokens=self.max_tokens,
            seed=stable_hash("difficulty", prompt.id) % (2**31),
        )
        try:
            reply = self.backend.complete(request)
        except BackendError as exc:
            raise ScorerUnavailableError(str(exc))
        text = reply.text.strip()
        try:
            return int(text)
        except ValueError:
            raise ScorerParseError(f"scorer reply is not an integer: {text[:80]!r}")


def assign_difficulty(prompt: Prompt, scorer: DifficultyScorer) -> int:
    level = scorer.score(prompt)
    if not isinstance(level, int) or not 1 <= level <= 10:
        raise ScorerParseError(f"scorer returned {level!r}, expected an integer in 1..10")
    return level


def score_prompts(
    pset: PromptSet,
    scorer: DifficultyScorer,
    max_in_flight: int = 16,
) -> tuple[PromptSet, list[str]]:
    """Score every prompt concurrently; parse failures leave the prompt
    unscored (difficulty_level None) and are reported by id."""

    def one(prompt: Prompt) -> tuple[Prompt, Optional[str]]:
        try:
            return prompt.with_difficulty(assign_difficulty(prompt, scorer)), None
        except ScorerParseError:
            return prompt.with_difficulty(None), prompt.id

    with BoundedRunner(max_in_flight) as runner:
        results = runner.map(one, pset.prompts)
    scored = [p for p, _ in results]
    unscored = [pid for _, pid in results if pid is not None]
    refreshed = PromptSet.build(
        scored, source_paths=pset.manifest.source_paths, skipped=pset.manifest.skipped
    )
    return refreshed, unscored


class UnscoredPromptError(RuntimeError):
    def __init__(self, prompt_ids: list[str]):
        super().__init__(f"unscored prompts encountered: {', '.join(prompt_ids[:10])}")
        self.prompt_ids = prompt_ids


def select_for_augmentation(pset: PromptSet, min_level: int, allow_unscored: bool = False) -> PromptSet:
    """Retain exactly the prompts with difficulty_level >= min_level.

    Unscored prompts are an error unless allow_unscored, in which case they
    are excluded from the selection.
    """
    unscored = [p.id for p in pset if p.difficulty_level is None]
    if unscored and not allow_unscored:
        raise UnscoredPromptError(unscored)
    kept = [p for p in pset if p.difficulty_level is not None and p.difficulty_level >= min_level]
    return PromptSet.build(kept, source_paths=pset.manifest.source_paths, skipped=pset.manifest.skipped)


class BudgetMode(str, Enum):
    UNIFORM = "uniform"
    MONOTONE_BY_LEVEL = "monotone_by_level"


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class BudgetSchedule:
    base_samples: int = 10
    mode: BudgetMode = BudgetMode.UNIFORM
    level_multipliers: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.base_samples < 1:
            raise ScheduleError("base_samples must be >= 1")
        if self.mode is BudgetMode.MONOTONE_BY_LEVEL:
            if not self.level_multipliers:
                raise ScheduleError("monotone_by_level requires level_multipliers")
            items = sorted(self.level_multipliers.items())
            for (_, a), (_, b) in zip(items, items[1:]):
                if b < a:
                    raise ScheduleError("level multipliers must be non-decreasing in level")
            if any(m < 1 for _, m in items):
                raise ScheduleError("level multipliers must be positive")


def sample_budget(level: int, sched: BudgetSchedule) -> int:
    if not 1 <= level <= 10:
        raise ValueError(f"difficulty level must be in 1..10, got {level}")
    if sched.mode is BudgetMode.UNIFORM:
        return sched.base_samples
    if level not in sched.level_multipliers:
        raise ScheduleError(f"no multiplier configured for level {level}")
    return sched.base_samples * sched.level_multipliers[level]
