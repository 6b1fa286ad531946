"""Three-valued rule reward over verification outcomes.

Correct answer 1, wrong-but-well-formed answer 0, missing answer format -1.
Code results map onto the same three branches: all cases pass is correct,
any failing case with a valid extracted program is wrong, and a response
without a closed code block has no valid format.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Union

from .code_judge import JudgeResult
from .math_answers import VerifierOutcome

REWARD_CORRECT = 1
REWARD_WRONG = 0
REWARD_NO_FORMAT = -1

REWARD_VALUES = (REWARD_NO_FORMAT, REWARD_WRONG, REWARD_CORRECT)

_OUTCOME_REWARDS = {
    VerifierOutcome.TRUE: REWARD_CORRECT,
    VerifierOutcome.FALSE: REWARD_WRONG,
    VerifierOutcome.NO_VALID_FORMAT: REWARD_NO_FORMAT,
}


@dataclass(frozen=True)
class RewardInput:
    """Provenance carried alongside a reward computation; the rule itself
    depends only on the verification outcome."""

    prompt_id: str
    response: str
    reference: str


def outcome_from_judge(result: Optional[JudgeResult]) -> VerifierOutcome:
    """Map a code judging result onto the three verifier branches.

    None means no program could be extracted (no closed fenced block), which
    is the code-domain form of an invalid answer format.
    """
    if result is None:
        return VerifierOutcome.NO_VALID_FORMAT
    return VerifierOutcome.TRUE if result.all_pass else VerifierOutcome.FALSE


def reward(inp: Optional[RewardInput], outcome: Union[VerifierOutcome, JudgeResult, None]) -> int:
    """The rule reward for one verified completion. `inp` is provenance only."""
    if outcome is None:
        raise ValueError("missing verification outcome; refusing to default to 0")
    if isinstance(outcome, JudgeResult):
        outcome = outcome_from_judge(outcome)
    return _OUTCOME_REWARDS[outcome]


class UnverifiedRecordError(RuntimeError):
    def __init__(self, ids: list[str]):
        super().__init__(f"records missing verification outcomes: {', '.join(ids[:10])}")
        self.ids = ids


def label_store(records: Iterable[dict]) -> tuple[list[dict], dict[int, int]]:
    """Attach `reward` to every verified record; returns (records, counts).

    Records must carry an `outcome` field; any without one abort the batch
    with the offending ids listed.
    """
    labeled: list[dict] = []
    missing: list[str] = []
    counts = {REWARD_NO_FORMAT: 0, REWARD_WRONG: 0, REWARD_CORRECT: 0}
    for rec in records:
        outcome_raw = rec.get("outcome")
        if outcome_raw is None:
            missing.append(f"{rec.get('prompt_id', '?')}:{rec.get('sample_index', '?')}")
            continue
        value = reward(None, VerifierOutcome(outcome_raw))
        labeled.append({**rec, "reward": value})
        counts[value] += 1
    if missing:
        raise UnverifiedRecordError(missing)
    return labeled, counts
