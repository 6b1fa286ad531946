"""Prompt ingestion, validation, deduplication, and persistence.

Canonical on-disk form is line-delimited JSON, one prompt per line, with
fixed field names: ``id``, ``domain``, ``text``, ``reference_answer``,
``test_cases``, ``difficulty_level``, ``source``, ``image_ref``.
"""

from __future__ import annotations

import datetime as _dt
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from . import jsonl


class Domain(str, Enum):
    MATH = "math"
    CODE = "code"
    GEO = "geo"


class CompareMode(str, Enum):
    EXACT = "exact"
    TRIMMED_LINES = "trimmed_lines"


class Violation(str, Enum):
    WRONG_PAYLOAD_FOR_DOMAIN = "WrongPayloadForDomain"
    DIFFICULTY_OUT_OF_RANGE = "DifficultyOutOfRange"
    EMPTY_TEXT = "EmptyText"
    MISSING_ID = "MissingId"
    EMPTY_EXPECTED_OUTPUT = "EmptyExpectedOutput"


# skip reason codes reported by ingest for lines that never become Prompts
SKIP_BAD_JSON = "BadJson"
SKIP_UNKNOWN_DOMAIN = "UnknownDomain"
SKIP_DOMAIN_MISMATCH = "DomainMismatch"
SKIP_DUPLICATE_ID = "DuplicateId"
SKIP_BAD_TEST_CASE = "BadTestCase"


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # keep pytest collection away from the Test* name

    input: str
    expected_output: str
    compare_mode: CompareMode = CompareMode.TRIMMED_LINES
    allow_empty_output: bool = False

    def to_record(self) -> dict:
        rec = {
            "input": self.input,
            "expected_output": self.expected_output,
            "compare_mode": self.compare_mode.value,
        }
        if self.allow_empty_output:
            rec["allow_empty_output"] = True
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "TestCase":
        return cls(
            input=str(rec["input"]),
            expected_output=str(rec["expected_output"]),
            compare_mode=CompareMode(rec.get("compare_mode", "trimmed_lines")),
            allow_empty_output=bool(rec.get("allow_empty_output", False)),
        )


@dataclass(frozen=True)
class Prompt:
    id: str
    domain: Domain
    text: str
    reference_answer: Optional[str] = None
    test_cases: Optional[tuple[TestCase, ...]] = None
    difficulty_level: Optional[int] = None
    source: str = ""
    image_ref: Optional[str] = None

    def with_difficulty(self, level: Optional[int]) -> "Prompt":
        return replace(self, difficulty_level=level)

    def to_record(self) -> dict:
        rec: dict = {"id": self.id, "domain": self.domain.value, "text": self.text}
        if self.reference_answer is not None:
            rec["reference_answer"] = self.reference_answer
        if self.test_cases is not None:
            rec["test_cases"] = [tc.to_record() for tc in self.test_cases]
        if self.difficulty_level is not None:
            rec["difficulty_level"] = self.difficulty_level
        rec["source"] = self.source
        if self.image_ref is not None:
            rec["image_ref"] = self.image_ref
        return rec

    @classmethod
    def from_record(cls, rec: dict, default_domain: Optional[Domain] = None) -> "Prompt":
        domain_raw = rec.get("domain")
        if domain_raw is None:
            if default_domain is None:
                raise PromptSchemaError(SKIP_UNKNOWN_DOMAIN, "record has no domain")
            domain = default_domain
        else:
            try:
                domain = Domain(str(domain_raw).lower())
            except ValueError:
                raise PromptSchemaError(SKIP_UNKNOWN_DOMAIN, f"unknown domain {domain_raw!r}")
        cases = rec.get("test_cases")
        parsed_cases: Optional[tuple[TestCase, ...]] = None
        if cases is not None:
            try:
                parsed_cases = tuple(TestCase.from_record(c) for c in cases)
            except (KeyError, TypeError, ValueError) as exc:
                raise PromptSchemaError(SKIP_BAD_TEST_CASE, str(exc))
        level = rec.get("difficulty_level")
        return cls(
            id=str(rec.get("id", "")),
            domain=domain,
            text=str(rec.get("text", "")),
            reference_answer=rec.get("reference_answer"),
            test_cases=parsed_cases,
            difficulty_level=int(level) if level is not None else None,
            source=str(rec.get("source", "")),
            image_ref=rec.get("image_ref"),
        )


class PromptSchemaError(ValueError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass
class SkippedLine:
    line_no: int
    reason: str


@dataclass
class Manifest:
    source_paths: list[str]
    ingested_at: str
    count: int
    skipped: list[SkippedLine] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "source_paths": self.source_paths,
            "ingested_at": self.ingested_at,
            "count": self.count,
            "skipped": [{"line_no": s.line_no, "reason": s.reason} for s in self.skipped],
        }


@dataclass
class PromptSet:
    prompts: tuple[Prompt, ...]
    manifest: Manifest

    def __post_init__(self) -> None:
        if self.manifest.count != len(self.prompts):
            raise ValueError(
                f"manifest count {self.manifest.count} != prompt count {len(self.prompts)}"
            )

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)

    def by_id(self) -> dict[str, Prompt]:
        return {p.id: p for p in self.prompts}

    @classmethod
    def build(
        cls,
        prompts: Iterable[Prompt],
        source_paths: Iterable[str] = (),
        skipped: Iterable[SkippedLine] = (),
    ) -> "PromptSet":
        ps = tuple(prompts)
        manifest = Manifest(
            source_paths=list(source_paths),
            ingested_at=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            count=len(ps),
            skipped=list(skipped),
        )
        return cls(prompts=ps, manifest=manifest)


def validate_prompt(p: Prompt) -> list[Violation]:
    """Return all invariant violations; an empty list means the prompt is valid."""
    violations: list[Violation] = []
    if not p.id:
        violations.append(Violation.MISSING_ID)
    if not p.text.strip():
        violations.append(Violation.EMPTY_TEXT)
    has_answer = p.reference_answer is not None
    has_cases = p.test_cases is not None and len(p.test_cases) > 0
    if p.domain is Domain.CODE:
        if not has_cases or has_answer:
            violations.append(Violation.WRONG_PAYLOAD_FOR_DOMAIN)
    else:
        if not has_answer or has_cases:
            violations.append(Violation.WRONG_PAYLOAD_FOR_DOMAIN)
    if p.difficulty_level is not None and not 1 <= p.difficulty_level <= 10:
        violations.append(Violation.DIFFICULTY_OUT_OF_RANGE)
    if p.test_cases:
        for tc in p.test_cases:
            if tc.expected_output == "" and not tc.allow_empty_output:
                violations.append(Violation.EMPTY_EXPECTED_OUTPUT)
                break
    return violations


def ingest_prompts(path: Path | str, domain: Domain) -> PromptSet:
    """Stream one file of line-delimited prompt records into a PromptSet.

    Invalid lines are skipped with a reason code in the manifest, never
    silently dropped. A record whose domain disagrees with the declared
    domain is skipped; a record without a domain inherits the declared one.
    """
    path = Path(path)
    prompts: list[Prompt] = []
    skipped: list[SkippedLine] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except ValueError:
                skipped.append(SkippedLine(line_no, SKIP_BAD_JSON))
                continue
            try:
                prompt = Prompt.from_record(rec, default_domain=domain)
            except PromptSchemaError as exc:
                skipped.append(SkippedLine(line_no, exc.reason))
                continue
            if prompt.domain is not domain:
                skipped.append(SkippedLine(line_no, SKIP_DOMAIN_MISMATCH))
                continue
            violations = validate_prompt(prompt)
            if violations:
                skipped.append(SkippedLine(line_no, violations[0].value))
                continue
            if prompt.id in seen_ids:
                skipped.append(SkippedLine(line_no, SKIP_DUPLICATE_ID))
                continue
            seen_ids.add(prompt.id)
            prompts.append(prompt)
    return PromptSet.build(prompts, source_paths=[str(path)], skipped=skipped)


def write_prompts(pset: PromptSet | Iterable[Prompt], path: Path | str) -> int:
    prompts = pset.prompts if isinstance(pset, PromptSet) else tuple(pset)
    return jsonl.write_jsonl(path, (p.to_record() for p in prompts))


_WS_RUN = re.compile(r"\s+")


def normalized_text_key(text: str) -> str:
    """Dedup key: whitespace runs collapsed to single spaces, case preserved."""
    return _WS_RUN.sub(" ", text).strip()


def dedupe_prompts(pset: PromptSet) -> PromptSet:
    """Drop prompts whose normalized text was already seen; first occurrence wins."""
    seen: set[str] = set()
    kept: list[Prompt] = []
    for p in pset.prompts:
        key = normalized_text_key(p.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(p)
    return PromptSet.build(kept, source_paths=pset.manifest.source_paths, skipped=pset.manifest.skipped)


def merge_prompt_sets(sets: Iterable[PromptSet]) -> PromptSet:
    """Union several per-source sets, skipping cross-source id collisions."""
    prompts: list[Prompt] = []
    skipped: list[SkippedLine] = []
    paths: list[str] = []
    seen_ids: set[str] = set()
    for pset in sets:
        paths.extend(pset.manifest.source_paths)
        skipped.extend(pset.manifest.skipped)
        for p in pset.prompts:
            if p.id in seen_ids:
                skipped.append(SkippedLine(0, SKIP_DUPLICATE_ID))
                continue
            seen_ids.add(p.id)
            prompts.append(p)
    return PromptSet.build(prompts, source_paths=paths, skipped=skipped)
