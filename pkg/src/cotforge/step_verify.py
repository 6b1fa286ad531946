"""Optional step-level verification of already-positive completions.

A critic model first condenses the long reasoning trace into numbered
steps, then votes k times (default 5) on the first erroneous step. Two
acceptance rules are produced: strict keeps solutions with zero detected
errors, loose allows at most two. A vote that cannot be parsed counts as a
detected error, which keeps strict genuinely strict.

The stage is off by default: on held-out evaluations it did not improve
downstream quality, but the procedure is kept because it is cheap to run
and useful for auditing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol

from .rewards import REWARD_CORRECT
from .sampling import Backend, BackendError, BoundedRunner, CompletionRequest, stable_hash


@dataclass(frozen=True)
class CompactSolution:
    steps: tuple[str, ...]
    source_completion: str

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("a compact solution needs at least one step")

    def numbered_text(self) -> str:
        return "\n".join(f"{i + 1}. {s}" for i, s in enumerate(self.steps))


@dataclass(frozen=True)
class ErrorVote:
    iteration: int
    first_error_step: Optional[int] = None
    parse_failed: bool = False

    @property
    def detected(self) -> bool:
        return self.first_error_step is not None or self.parse_failed


@dataclass(frozen=True)
class VerificationRule:
    name: str
    max_detected_errors: int


STRICT = VerificationRule("strict", 0)
LOOSE = VerificationRule("loose", 2)

DEFAULT_VOTES = 5

NO_ERROR_TOKEN = "no error"

DEFAULT_COMPACT_TEMPLATE = (
    "Condense the following worked solution into a short numbered list of the "
    "essential steps, one per line, formatted as '1. ...', '2. ...'.\n\n{solution}"
)
DEFAULT_VOTE_TEMPLATE = (
    "Check the numbered solution below step by step. If every step is correct, "
    f"reply exactly '{NO_ERROR_TOKEN}'. Otherwise reply with the number of the first "
    "incorrect step.\n\n{solution}"
)


class CriticUnavailableError(RuntimeError):
    pass


class Critic(Protocol):
    def compact(self, key: str, cot_text: str) -> str: ...

    def vote(self, key: str, iteration: int, solution_text: str) -> str: ...


class BackendCritic:
    """Critic over the same chat backend interface the sampler uses."""

    def __init__(
        self,
        backend: Backend,
        compact_template: str = DEFAULT_COMPACT_TEMPLATE,
        vote_template: str = DEFAULT_VOTE_TEMPLATE,
        max_tokens: int = 1024,
    ):
        for name, template in (("compact", compact_template), ("vote", vote_template)):
            if "{solution}" not in template:
                raise ValueError(f"{name} template must contain a {{solution}} placeholder")
        self.backend = backend
        self.compact_template = compact_template
        self.vote_template = vote_template
        self.max_tokens = max_tokens

    def _ask(self, key: str, iteration: int, content: str) -> str:
        request = CompletionRequest(
            prompt_id=f"critic:{key}",
            sample_index=iteration,
            n_total=1,
            messages=({"role": "user", "content": content},),
            temperature=0.0,
            max_tokens=self.max_tokens,
            seed=stable_hash("critic", key, iteration) % (2**31),
        )
        try:
            return self.backend.complete(request).text
        except BackendError as exc:
            raise CriticUnavailableError(str(exc))

    def compact(self, key: str, cot_text: str) -> str:
        return self._ask(key, 0, self.compact_template.format(solution=cot_text))

    def vote(self, key: str, iteration: int, solution_text: str) -> str:
        return self._ask(key, iteration, self.vote_template.format(solution=solution_text))


_STEP_LINE = re.compile(r"^\s*(\d+)\s*[.):]\s*(.*)$")


def split_numbered_steps(reply: str) -> list[str]:
    """Split a critic reply into steps by numbered lines; continuation lines
    attach to the current step."""
    steps: list[str] = []
    for line in reply.splitlines():
        m = _STEP_LINE.match(line)
        if m:
            steps.append(m.group(2).strip())
        elif steps and line.strip():
            steps[-1] = (steps[-1] + " " + line.strip()).strip()
    return [s for s in steps if s]


def extract_compact_solution(
    completion_key: str, cot_text: str, critic: Critic, retries: int = 1
) -> Optional[CompactSolution]:
    """Ask the critic to rewrite the trace as numbered steps; None when the
    reply stays unparseable after retrying."""
    for _ in range(retries + 1):
        reply = critic.compact(completion_key, cot_text)
        steps = split_numbered_steps(reply)
        if steps:
            return CompactSolution(steps=tuple(steps), source_completion=completion_key)
    return None


_INT_TOKEN = re.compile(r"\d+")


def parse_vote_reply(reply: str, n_steps: int) -> tuple[Optional[int], bool]:
    """(first_error_step, parse_failed). An explicit no-error token wins;
    otherwise the first integer is the step index, rejected when out of range."""
    lowered = reply.lower()
    if NO_ERROR_TOKEN in lowered or "no errors" in lowered:
        return None, False
    m = _INT_TOKEN.search(reply)
    if not m:
        return None, True
    value = int(m.group(0))
    if not 1 <= value <= n_steps:
        return None, True
    return value, False


def vote_first_error(sol: CompactSolution, critic: Critic, k: int = DEFAULT_VOTES) -> list[ErrorVote]:
    if k < 1:
        raise ValueError("k must be >= 1")
    text = sol.numbered_text()
    votes: list[ErrorVote] = []
    for iteration in range(k):
        reply = critic.vote(sol.source_completion, iteration, text)
        step, failed = parse_vote_reply(reply, len(sol.steps))
        votes.append(ErrorVote(iteration=iteration, first_error_step=step, parse_failed=failed))
    return votes


def detected_errors(votes: Iterable[ErrorVote]) -> int:
    return sum(1 for v in votes if v.detected)


def accept(votes: list[ErrorVote], rule: VerificationRule) -> bool:
    if not votes:
        raise ValueError("accept needs at least one vote")
    return detected_errors(votes) <= rule.max_detected_errors


def build_verified_subsets(
    labeled_records: Iterable[dict],
    critic: Critic,
    k: int = DEFAULT_VOTES,
    max_in_flight: int = 16,
) -> tuple[list[dict], list[dict]]:
    """(strict subset, loose subset) of reward-positive records.

    Unextractable solutions are excluded from both subsets; by construction
    strict is a subset of loose.
    """
    positives = [rec for rec in labeled_records if rec.get("reward") == REWARD_CORRECT]

    def judge_one(rec: dict) -> tuple[dict, Optional[int]]:
        key = f"{rec['prompt_id']}:{rec['sample_index']}"
        sol = extract_compact_solution(key, rec["text"], critic)
        if sol is None:
            return rec, None
        return rec, detected_errors(vote_first_error(sol, critic, k))

    with BoundedRunner(max_in_flight) as runner:
        judged = runner.map(judge_one, positives)

    strict_set: list[dict] = []
    loose_set: list[dict] = []
    for rec, detected in judged:
        if detected is None:
            continue
        if detected <= STRICT.max_detected_errors:
            strict_set.append(rec)
        if detected <= LOOSE.max_detected_errors:
            loose_set.append(rec)
    return strict_set, loose_set
