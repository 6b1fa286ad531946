"""Assemble the final datasets and the curation funnel statistics.

Three line-delimited output shapes, directly consumable by trainer tooling:
SFT `{prompt, response, ...}`, preference pairs `{prompt, chosen, rejected,
...}`, and RL prompt records `{prompt, reference_answer | test_cases, ...}`.
Prompt text is stored raw; no chat-template rendering happens here.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .prompts import Prompt, TestCase
from .rewards import REWARD_CORRECT, REWARD_NO_FORMAT, REWARD_WRONG

REJECTED_WRONG_ANSWER = "wrong_answer"
REJECTED_NO_VALID_FORMAT = "no_valid_format"


@dataclass(frozen=True)
class SFTRecord:
    prompt_id: str
    prompt_text: str
    response_text: str
    difficulty_level: Optional[int]
    domain: str
    source: str

    def to_line(self) -> dict:
        return {
            "prompt": self.prompt_text,
            "response": self.response_text,
            "prompt_id": self.prompt_id,
            "difficulty_level": self.difficulty_level,
            "domain": self.domain,
            "source": self.source,
        }

    @classmethod
    def from_line(cls, rec: dict) -> "SFTRecord":
        return cls(
            prompt_id=rec["prompt_id"],
            prompt_text=rec["prompt"],
            response_text=rec["response"],
            difficulty_level=rec.get("difficulty_level"),
            domain=rec.get("domain", ""),
            source=rec.get("source", ""),
        )


@dataclass(frozen=True)
class PreferencePair:
    prompt_id: str
    prompt_text: str
    chosen: str
    rejected: str
    rejected_reason: str

    def to_line(self) -> dict:
        return {
            "prompt": self.prompt_text,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "prompt_id": self.prompt_id,
            "rejected_reason": self.rejected_reason,
        }

    @classmethod
    def from_line(cls, rec: dict) -> "PreferencePair":
        return cls(
            prompt_id=rec["prompt_id"],
            prompt_text=rec["prompt"],
            chosen=rec["chosen"],
            rejected=rec["rejected"],
            rejected_reason=rec.get("rejected_reason", ""),
        )


@dataclass(frozen=True)
class RLPromptRecord:
    prompt_id: str
    prompt_text: str
    reference_answer: Optional[str]
    test_cases: Optional[tuple[TestCase, ...]]
    difficulty_level: Optional[int]

    def to_line(self) -> dict:
        rec: dict = {"prompt": self.prompt_text, "prompt_id": self.prompt_id}
        if self.reference_answer is not None:
            rec["reference_answer"] = self.reference_answer
        if self.test_cases is not None:
            rec["test_cases"] = [tc.to_record() for tc in self.test_cases]
        rec["difficulty_level"] = self.difficulty_level
        return rec

    @classmethod
    def from_line(cls, rec: dict) -> "RLPromptRecord":
        cases = rec.get("test_cases")
        return cls(
            prompt_id=rec["prompt_id"],
            prompt_text=rec["prompt"],
            reference_answer=rec.get("reference_answer"),
            test_cases=tuple(TestCase.from_record(c) for c in cases) if cases is not None else None,
            difficulty_level=rec.get("difficulty_level"),
        )


def split_pos_neg(labeled_records: Iterable[dict]) -> tuple[list[dict], list[dict]]:
    """Exhaustive partition: reward 1 is positive, reward 0 or -1 negative."""
    positives: list[dict] = []
    negatives: list[dict] = []
    for rec in labeled_records:
        value = rec.get("reward")
        if value == REWARD_CORRECT:
            positives.append(rec)
        elif value in (REWARD_WRONG, REWARD_NO_FORMAT):
            negatives.append(rec)
        else:
            raise ValueError(f"record has no valid reward: {rec.get('prompt_id')!r} -> {value!r}")
    return positives, negatives


def build_sft(positives: Iterable[dict], prompt_index: Mapping[str, Prompt]) -> list[SFTRecord]:
    """One record per positive completion; a prompt sampled many times can
    appear many times."""
    records: list[SFTRecord] = []
    for rec in positives:
        prompt = prompt_index[rec["prompt_id"]]
        records.append(
            SFTRecord(
                prompt_id=prompt.id,
                prompt_text=prompt.text,
                response_text=rec["text"],
                difficulty_level=prompt.difficulty_level,
                domain=prompt.domain.value,
                source=prompt.source,
            )
        )
    return records


def _rejected_reason(rec: dict) -> str:
    return REJECTED_WRONG_ANSWER if rec["reward"] == REWARD_WRONG else REJECTED_NO_VALID_FORMAT


def build_dpo_pairs(
    positives: Iterable[dict],
    negatives: Iterable[dict],
    prompt_index: Mapping[str, Prompt],
    cap: int = 4,
) -> list[PreferencePair]:
    """Per prompt, up to `cap` chosen x rejected pairs.

    Wrong-but-well-formed negatives (reward 0) are paired before format
    failures (reward -1): they are the harder contrast. Order is
    deterministic by sample_index on both sides.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    by_prompt_pos: dict[str, list[dict]] = {}
    by_prompt_neg: dict[str, list[dict]] = {}
    prompt_order: list[str] = []
    for rec in positives:
        if rec["prompt_id"] not in by_prompt_pos and rec["prompt_id"] not in by_prompt_neg:
            prompt_order.append(rec["prompt_id"])
        by_prompt_pos.setdefault(rec["prompt_id"], []).append(rec)
    for rec in negatives:
        if rec["prompt_id"] not in by_prompt_pos and rec["prompt_id"] not in by_prompt_neg:
            prompt_order.append(rec["prompt_id"])
        by_prompt_neg.setdefault(rec["prompt_id"], []).append(rec)

    pairs: list[PreferencePair] = []
    for pid in prompt_order:
        chosen = sorted(by_prompt_pos.get(pid, []), key=lambda r: r["sample_index"])
        rejected = sorted(
            by_prompt_neg.get(pid, []),
            key=lambda r: (0 if r["reward"] == REWARD_WRONG else 1, r["sample_index"]),
        )
        if not chosen or not rejected:
            continue
        prompt = prompt_index[pid]
        taken = 0
        for pos in chosen:
            for neg in rejected:
                if taken >= cap:
                    break
                pairs.append(
                    PreferencePair(
                        prompt_id=pid,
                        prompt_text=prompt.text,
                        chosen=pos["text"],
                        rejected=neg["text"],
                        rejected_reason=_rejected_reason(neg),
                    )
                )
                taken += 1
            if taken >= cap:
                break
    return pairs


def build_rl_prompts(
    sft_records: Sequence[SFTRecord],
    prompt_index: Mapping[str, Prompt],
    *,
    count: Optional[int] = None,
    fraction: Optional[float] = None,
    seed: int = 0,
) -> list[RLPromptRecord]:
    """Seeded subsample of distinct SFT prompts, each with its scorable payload.

    Exactly one of count / fraction selects the size; relative corpus order
    is preserved so the same seed always yields the same records.
    """
    if (count is None) == (fraction is None):
        raise ValueError("specify exactly one of count or fraction")
    distinct: list[str] = []
    seen: set[str] = set()
    for rec in sft_records:
        if rec.prompt_id not in seen:
            seen.add(rec.prompt_id)
            distinct.append(rec.prompt_id)
    if fraction is not None:
        if not 0.0 <= fraction <= 1.0:
            raise ValueError("fraction must be in [0, 1]")
        count = round(len(distinct) * fraction)
    assert count is not None
    if count > len(distinct):
        raise ValueError(f"requested {count} RL prompts but only {len(distinct)} distinct prompts exist")
    picked = set(random.Random(seed).sample(distinct, count))
    records: list[RLPromptRecord] = []
    for pid in distinct:
        if pid not in picked:
            continue
        prompt = prompt_index[pid]
        records.append(
            RLPromptRecord(
                prompt_id=pid,
                prompt_text=prompt.text,
                reference_answer=prompt.reference_answer,
                test_cases=prompt.test_cases,
                difficulty_level=prompt.difficulty_level,
            )
        )
    return records


@dataclass
class CurationStats:
    ingested: int = 0
    deduped: int = 0
    scored: int = 0
    sampled: int = 0
    filter_passed: int = 0
    verified_true: int = 0
    verified_false: int = 0
    no_valid_format: int = 0
    sft_records: int = 0
    dpo_pairs: int = 0
    rl_prompts: int = 0
    strict_verified: Optional[int] = None
    loose_verified: Optional[int] = None

    def validate(self) -> None:
        reached = self.verified_true + self.verified_false + self.no_valid_format
        if reached != self.filter_passed:
            raise ValueError(
                f"outcome counts {reached} do not partition the {self.filter_passed} "
                "completions that reached verification"
            )

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "CurationStats":
        return cls(**rec)


def format_stats(stats: CurationStats) -> str:
    lines = ["curation funnel:"]
    for name, value in stats.to_record().items():
        shown = "skipped" if value is None else value
        lines.append(f"  {name:<16} {shown}")
    return "\n".join(lines)
