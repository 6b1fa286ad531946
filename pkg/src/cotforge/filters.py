"""Rule-based response cleaning applied before verification.

All filters are pure functions of (text, config): windowed n-gram counting
for repetition, script-ratio counting for language, boxed-marker / closed-
fence presence for answer format, and marker scanning for geometry
reflectiveness. No statistical detectors, so verdicts are reproducible and
explainable.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

from .code_judge import has_closed_code_block
from .math_answers import extract_final_answer
from .prompts import Domain
from .sampling import Completion


class TargetScript(str, Enum):
    LATIN = "latin"
    HAN = "han"
    MIXED = "mixed"


class FailedRule(str, Enum):
    REPETITION = "repetition"
    LANGUAGE = "language"
    ANSWER_FORMAT = "answer_format"
    INCOMPLETE_CODE = "incomplete_code"
    NON_REFLECTIVE = "non_reflective"
    EXCESSIVE_WAIT = "excessive_wait"


class Reflectiveness(str, Enum):
    OK = "ok"
    NON_REFLECTIVE = "non_reflective"
    EXCESSIVE_WAIT = "excessive_wait"


DEFAULT_REFLECTIVE_MARKERS = ("wait", "let me", "double-check", "re-examine", "hmm")


@dataclass(frozen=True)
class FilterConfig:
    ngram_window: int = 32
    max_ngram_repeats: int = 4
    target_script: TargetScript = TargetScript.LATIN
    max_foreign_char_ratio: float = 0.2
    reflective_markers: tuple[str, ...] = DEFAULT_REFLECTIVE_MARKERS
    max_wait_marker_count: int = 8

    def __post_init__(self) -> None:
        if not 0.0 <= self.max_foreign_char_ratio <= 1.0:
            raise ValueError("max_foreign_char_ratio must be in [0, 1]")
        if self.ngram_window < 1 or self.max_ngram_repeats < 1 or self.max_wait_marker_count < 1:
            raise ValueError("window, repeat, and wait thresholds must be positive")


@dataclass(frozen=True)
class FilterVerdict:
    passed: bool
    failed_rules: tuple[FailedRule, ...]

    def __post_init__(self) -> None:
        if self.passed != (not self.failed_rules):
            raise ValueError("passed must hold exactly when failed_rules is empty")

    def to_record(self) -> dict:
        return {"passed": self.passed, "failed_rules": [r.value for r in self.failed_rules]}


def detect_repetition(text: str, cfg: FilterConfig) -> bool:
    """True when any window of `ngram_window` consecutive whitespace tokens
    occurs more than `max_ngram_repeats` times (overlapping occurrences
    counted). Text shorter than one window has no windows and cannot be
    repetitive.
    """
    tokens = text.split()
    window = cfg.ngram_window
    if len(tokens) < window:
        return False
    counts: Counter[tuple[str, ...]] = Counter()
    for i in range(len(tokens) - window + 1):
        gram = tuple(tokens[i : i + window])
        counts[gram] += 1
        if counts[gram] > cfg.max_ngram_repeats:
            return True
    return False


@lru_cache(maxsize=4096)
def _letter_script(ch: str) -> str | None:
    """Script class of a letter; None for non-letters and math-symbol letters.

    Greek letters are treated as math symbols, not foreign text: they are
    ubiquitous in math solutions regardless of the response language.
    """
    if not unicodedata.category(ch).startswith("L"):
        return None
    name = unicodedata.name(ch, "")
    if "LATIN" in name:
        return "latin"
    if name.startswith("CJK") or "IDEOGRAPH" in name:
        return "han"
    if "GREEK" in name:
        return None
    return "other"


def detect_foreign_language(text: str, cfg: FilterConfig) -> bool:
    """True when letters outside the target script exceed the ratio cap.

    Digits, punctuation, and math symbols count toward neither side; a text
    with no letters at all has ratio 0.
    """
    if cfg.target_script is TargetScript.MIXED:
        targets = {"latin", "han"}
    else:
        targets = {cfg.target_script.value}
    total = 0
    foreign = 0
    for ch in text:
        script = _letter_script(ch)
        if script is None:
            continue
        total += 1
        if script not in targets:
            foreign += 1
    if total == 0:
        return False
    return foreign / total > cfg.max_foreign_char_ratio


def has_answer_format(text: str, domain: Domain) -> bool:
    """Math/Geo: a well-bracketed boxed answer exists. Code: a closed fenced
    code block exists."""
    if domain is Domain.CODE:
        return has_closed_code_block(text)
    return extract_final_answer(text) is not None


def check_reflectiveness(text: str, cfg: FilterConfig) -> Reflectiveness:
    lowered = text.lower()
    if not any(marker.lower() in lowered for marker in cfg.reflective_markers):
        return Reflectiveness.NON_REFLECTIVE
    if lowered.count("wait") > cfg.max_wait_marker_count:
        return Reflectiveness.EXCESSIVE_WAIT
    return Reflectiveness.OK


def apply_filters(completion: Completion, domain: Domain, cfg: FilterConfig) -> FilterVerdict:
    """Aggregate all rules applicable to the domain, in canonical rule order."""
    text = completion.text
    failed: list[FailedRule] = []
    if detect_repetition(text, cfg):
        failed.append(FailedRule.REPETITION)
    if detect_foreign_language(text, cfg):
        failed.append(FailedRule.LANGUAGE)
    if not has_answer_format(text, domain):
        failed.append(FailedRule.INCOMPLETE_CODE if domain is Domain.CODE else FailedRule.ANSWER_FORMAT)
    if domain is Domain.GEO:
        reflect = check_reflectiveness(text, cfg)
        if reflect is Reflectiveness.NON_REFLECTIVE:
            failed.append(FailedRule.NON_REFLECTIVE)
        elif reflect is Reflectiveness.EXCESSIVE_WAIT:
            failed.append(FailedRule.EXCESSIVE_WAIT)
    return FilterVerdict(passed=not failed, failed_rules=tuple(failed))


# Rules that make a completion unusable even as a negative sample. Format
# failures are NOT here: a well-read response without a boxed answer still
# verifies as no_valid_format and serves as a preference-pair negative.
CONTENT_RULES = frozenset(
    {FailedRule.REPETITION, FailedRule.LANGUAGE, FailedRule.NON_REFLECTIVE, FailedRule.EXCESSIVE_WAIT}
)


def eligible_for_verification(verdict: FilterVerdict, finish_reason_error: bool = False) -> bool:
    if finish_reason_error:
        return False
    return not any(rule in CONTENT_RULES for rule in verdict.failed_rules)
