"""Final-answer extraction and exact equivalence checking for math responses.

Extraction takes the content of the last well-formed ``\\boxed{...}`` marker.
Normalization strips presentation markup and parses numeric forms (integers,
fractions, decimals, percents, scientific notation) into exact rationals;
everything else is compared as canonicalized text. Comparison is exact: no
floating-point tolerance anywhere, so ``0.3333`` never equals ``1/3``.

Known limitation: symbolic forms that need algebra (``sqrt(8)`` vs
``2 sqrt(2)``) fall back to text equality and will not match.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence, Union

from .sampling import Completion


class ValueKind(str, Enum):
    RATIONAL = "rational"
    DECIMAL_AS_RATIONAL = "decimal_as_rational"
    SYMBOLIC_TEXT = "symbolic_text"
    TUPLE = "tuple"
    INTERVAL = "interval"


_RATIONAL_KINDS = frozenset({ValueKind.RATIONAL, ValueKind.DECIMAL_AS_RATIONAL})


@dataclass(frozen=True)
class IntervalPayload:
    lo: "NormalizedValue"
    hi: "NormalizedValue"
    closed_lo: bool
    closed_hi: bool


Payload = Union[Fraction, str, tuple, IntervalPayload]


@dataclass(frozen=True)
class NormalizedValue:
    kind: ValueKind
    payload: Payload

    def canonical_string(self) -> str:
        if self.kind in _RATIONAL_KINDS:
            return str(self.payload)
        if self.kind is ValueKind.TUPLE:
            return "(" + ", ".join(v.canonical_string() for v in self.payload) + ")"
        if self.kind is ValueKind.INTERVAL:
            p = self.payload
            left = "[" if p.closed_lo else "("
            right = "]" if p.closed_hi else ")"
            return f"{left}{p.lo.canonical_string()}, {p.hi.canonical_string()}{right}"
        return str(self.payload)


@dataclass(frozen=True)
class ExtractedAnswer:
    raw: str
    span: tuple[int, int]


class VerifierOutcome(str, Enum):
    TRUE = "true"
    FALSE = "false"
    NO_VALID_FORMAT = "no_valid_format"


_BOXED = re.compile(r"\\boxed\s*\{")


def extract_final_answer(text: str) -> Optional[ExtractedAnswer]:
    """Content of the last well-formed boxed marker, or None.

    A marker is well-formed when its braces balance; long reasoning traces
    often box intermediate values, so the last box is taken as the committed
    answer.
    """
    if not text:
        return None
    best: Optional[ExtractedAnswer] = None
    for match in _BOXED.finditer(text):
        start = match.end()
        depth = 1
        i = start
        while i < len(text):
            ch = text[i]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    break
            i += 1
        if depth == 0:
            best = ExtractedAnswer(raw=text[start:i], span=(start, i))
    return best


# ---------------------------------------------------------------------------
# normalization

_DEFAULT_UNIT_WORDS = (
    "units", "unit", "degrees", "degree", "meters", "meter", "metres", "metre",
    "centimeters", "centimeter", "cm", "kilometers", "kilometer", "km",
    "inches", "inch", "feet", "foot", "miles", "mile",
    "seconds", "second", "minutes", "minute", "hours", "hour", "days", "day",
    "dollars", "dollar", "cents", "cent", "pounds", "pound", "grams", "gram", "kg",
)

_TEXT_CMDS = ("text", "textbf", "textit", "textrm", "mathrm", "mathbf", "mbox", "operatorname")
_FRAC_CMDS = ("frac", "dfrac", "tfrac", "cfrac")

_INT_RE = re.compile(r"[+-]?\d+\Z")
_FRAC_RE = re.compile(r"([+-]?\d+)\s*/\s*(\d+)\Z")
_DEC_RE = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+)\Z")
_SCI_RE = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)[eE][+-]?\d+\Z")
_THOUSANDS_RE = re.compile(r"[+-]?\d{1,3}(?:,\d{3})+(?:\.\d+)?\Z")


def _strip_outer(s: str, left: str, right: str) -> str:
    s = s.strip()
    while s.startswith(left) and s.endswith(right) and len(s) > len(left) + len(right):
        s = s[len(left):-len(right)].strip()
    return s


def _strip_redundant_braces(s: str) -> str:
    while len(s) >= 2 and s[0] == "{" and s[-1] == "}":
        depth = 0
        whole = True
        for i, ch in enumerate(s):
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0 and i != len(s) - 1:
                    whole = False
                    break
        if not whole or depth != 0:
            break
        s = s[1:-1].strip()
    return s


def _strip_markup(s: str, unit_words: Sequence[str]) -> str:
    s = s.strip()
    s = _strip_outer(s, "$$", "$$")
    s = _strip_outer(s, "$", "$")
    s = _strip_outer(s, r"\(", r"\)")
    s = _strip_outer(s, r"\[", r"\]")
    for cmd in _TEXT_CMDS:
        pattern = re.compile(r"\\" + cmd + r"\s*\{([^{}]*)\}")
        prev = None
        while prev != s:
            prev = s
            s = pattern.sub(r"\1", s)
    for cmd in _FRAC_CMDS:
        pattern = re.compile(r"\\" + cmd + r"\s*\{([^{}]*)\}\s*\{([^{}]*)\}")
        prev = None
        while prev != s:
            prev = s
            s = pattern.sub(r"\1/\2", s)
    s = re.sub(r"\\sqrt\s*\{([^{}]*)\}", r"sqrt(\1)", s)
    for noise in (r"\left", r"\right", r"\displaystyle", r"\limits", r"\,", r"\;", r"\:", r"\!", r"\ "):
        s = s.replace(noise, "")
    s = s.replace(r"\%", "%").replace(r"\$", "").replace("$", "")
    s = s.replace(r"\pi", "pi").replace(r"\cdot", "*").replace(r"\times", "*")
    s = s.replace("\u00d7", "*").replace("\u00b7", "*").replace("\u00f7", "/")
    s = s.replace("\u2212", "-").replace("\u2013", "-")
    s = re.sub(r"\s+", " ", s).strip()
    s = s.rstrip(" .,;:")
    s = re.sub(r"(?<=\d)\s*percent\s*\Z", "%", s, flags=re.IGNORECASE)
    if unit_words:
        alt = "|".join(re.escape(u) for u in sorted(unit_words, key=len, reverse=True))
        m = re.fullmatch(rf"(.*\d)\s*(?:{alt})\.?", s, flags=re.IGNORECASE)
        if m:
            s = m.group(1).strip()
    if _THOUSANDS_RE.fullmatch(s):
        s = s.replace(",", "")
    return s.strip()


def _split_top_level(s: str, sep: str = ",") -> list[str]:
    parts: list[str] = []
    depth = 0
    buf: list[str] = []
    for ch in s:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return parts


def _parse_rational(s: str) -> Optional[NormalizedValue]:
    compact = s.replace(" ", "")
    if _INT_RE.fullmatch(compact):
        return NormalizedValue(ValueKind.RATIONAL, Fraction(compact))
    m = _FRAC_RE.fullmatch(s)
    if m:
        num, den = int(m.group(1)), int(m.group(2))
        if den == 0:
            return None
        return NormalizedValue(ValueKind.RATIONAL, Fraction(num, den))
    if _DEC_RE.fullmatch(compact) or _SCI_RE.fullmatch(compact):
        return NormalizedValue(ValueKind.DECIMAL_AS_RATIONAL, Fraction(compact))
    return None


def normalize(raw: str, unit_words: Sequence[str] = _DEFAULT_UNIT_WORDS) -> NormalizedValue:
    """Canonicalize an answer string; falls back to SymbolicText, never fails."""
    s = _strip_markup(raw, unit_words)

    if s.endswith("%"):
        inner = _parse_rational(s[:-1].strip())
        if inner is not None:
            return NormalizedValue(ValueKind.RATIONAL, inner.payload / 100)

    rational = _parse_rational(s)
    if rational is not None:
        return rational

    if len(s) >= 2 and s[0] in "([" and s[-1] in ")]":
        parts = [p.strip() for p in _split_top_level(s[1:-1])]
        if len(parts) == 2 and (s[0] == "[" or s[-1] == "]") and all(parts):
            return NormalizedValue(
                ValueKind.INTERVAL,
                IntervalPayload(
                    lo=normalize(parts[0], unit_words),
                    hi=normalize(parts[1], unit_words),
                    closed_lo=s[0] == "[",
                    closed_hi=s[-1] == "]",
                ),
            )
        if len(parts) >= 2 and s[0] == "(" and s[-1] == ")" and all(parts):
            return NormalizedValue(
                ValueKind.TUPLE,
                tuple(normalize(p, unit_words) for p in parts),
            )
        if len(parts) == 1 and s[0] == "(" and s[-1] == ")" and parts[0]:
            return normalize(parts[0], unit_words)

    text = _strip_redundant_braces(s)
    text = re.sub(r"\s+", " ", text).strip()
    return NormalizedValue(ValueKind.SYMBOLIC_TEXT, text)


def equivalent(a: NormalizedValue, b: NormalizedValue) -> bool:
    """Exact equivalence; an equivalence relation over NormalizedValue."""
    if a.kind in _RATIONAL_KINDS and b.kind in _RATIONAL_KINDS:
        return a.payload == b.payload
    if a.kind is not b.kind:
        return False
    if a.kind is ValueKind.TUPLE:
        return len(a.payload) == len(b.payload) and all(
            equivalent(x, y) for x, y in zip(a.payload, b.payload)
        )
    if a.kind is ValueKind.INTERVAL:
        pa, pb = a.payload, b.payload
        return (
            pa.closed_lo == pb.closed_lo
            and pa.closed_hi == pb.closed_hi
            and equivalent(pa.lo, pb.lo)
            and equivalent(pa.hi, pb.hi)
        )
    return a.payload == b.payload


def verify_text(text: str, reference: str) -> VerifierOutcome:
    if not reference:
        raise ValueError("reference answer must be non-empty")
    extracted = extract_final_answer(text)
    if extracted is None:
        return VerifierOutcome.NO_VALID_FORMAT
    if equivalent(normalize(extracted.raw), normalize(reference)):
        return VerifierOutcome.TRUE
    return VerifierOutcome.FALSE


def verify(completion: Completion, reference: str) -> VerifierOutcome:
    return verify_text(completion.text, reference)


def score_benchmark(responses: Sequence[tuple[str, str]]) -> float:
    """Fraction of (response text, reference) pairs verifying True."""
    if not responses:
        raise ValueError("cannot score an empty response list")
    correct = sum(1 for text, ref in responses if verify_text(text, ref) is VerifierOutcome.TRUE)
    return correct / len(responses)
