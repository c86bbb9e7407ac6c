"""Parse raw LLM replies into family-specific payloads and validate them.

The generation prompts for token-level tasks append a fixed output-format
contract (Sentence/Entities lines); this module is the single place that
contract is defined and enforced. Bracket lists are comma-delimited, so
entity/attribute values containing commas cannot round-trip through the
reply format. Rejections are reasoned return values, never crashes, and
every reason code is stable for use as a manifest key.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

from .core import TaskFamily, TaskSpec
from .errors import DataError

MAX_TOKENS_PER_TEXT = 256


class ParseError(DataError):
    """The reply does not satisfy the format contract."""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason


class ValidationError(ParseError):
    """The reply parses but violates a payload invariant (e.g. spans)."""


# Stable rejection reason codes (manifest keys).
REASON_EMPTY_REPLY = "empty_reply"
REASON_MISSING_SENTENCE = "missing_sentence"
REASON_MISSING_ENTITIES = "missing_entities"
REASON_MISSING_ATTRIBUTES = "missing_attributes"
REASON_SPAN_CONSISTENCY = "span_consistency"
REASON_FAMILY_MISMATCH = "family_mismatch"
REASON_UNKNOWN_LABEL = "unknown_label"
REASON_LENGTH = "length"
REASON_UNKNOWN_ATTRIBUTE_CLASS = "unknown_attribute_class"
REASON_EMPTY_TEXT = "empty_text"
REASON_TRANSPORT = "transport"


@dataclass(frozen=True)
class Sentence:
    text: str


@dataclass(frozen=True)
class SentenceWithEntities:
    text: str
    entities: tuple[str, ...]


@dataclass(frozen=True)
class SentenceWithAttributes:
    text: str
    attributes: Mapping[str, tuple[str, ...]]


@dataclass(frozen=True)
class Pair:
    first: str
    second: str


ParsedPayload = Union[Sentence, SentenceWithEntities, SentenceWithAttributes, Pair]

# Tolerated decoration around label lines: list numbering and markdown bold.
_DECOR = r"(?:\d+[.)]\s*)?[*_]{0,2}"
_SENTENCE_LINE = re.compile(
    rf"^\s*{_DECOR}sentence[*_]{{0,2}}\s*:\s*[*_]{{0,2}}\s*(.+)$", re.IGNORECASE
)
_ENTITIES_LINE = re.compile(
    rf"^\s*{_DECOR}entities[*_]{{0,2}}\s*:\s*[*_]{{0,2}}\s*(.+)$", re.IGNORECASE
)
_ATTR_LINE = re.compile(
    rf"^\s*{_DECOR}\"?([A-Za-z][A-Za-z0-9 _-]{{0,40}}?)\"?[*_]{{0,2}}\s*:\s*\[(.*)\]\s*$"
)
_LEADING_LABEL = re.compile(
    r"^\s*(?:sentence|claim|hypothesis|question|evidence|answer|news)\s*:\s*",
    re.IGNORECASE,
)


def _strip_quotes(text: str) -> str:
    text = text.strip()
    while len(text) >= 2 and text[0] in "\"'“‘" and text[-1] in "\"'”’":
        text = text[1:-1].strip()
    return text


def _bracket_items(raw: str) -> tuple[str, ...]:
    raw = raw.strip()
    if raw.startswith("[") and raw.endswith("]"):
        raw = raw[1:-1]
    items = [_strip_quotes(part) for part in raw.split(",")]
    return tuple(item for item in items if item)


def _check_spans(text: str, entities: tuple[str, ...]) -> None:
    lowered = text.lower()
    offending = [e for e in entities if e.lower() not in lowered]
    if offending:
        raise ValidationError(
            REASON_SPAN_CONSISTENCY,
            f"entities not present in sentence: {offending}",
        )


def _parse_bare_sentence(raw: str) -> Sentence:
    for line in raw.splitlines():
        line = line.strip()
        if not line or line.endswith(":"):
            # Introductory lines ("Here is a sentence:") are preamble.
            continue
        line = _strip_quotes(_LEADING_LABEL.sub("", line))
        if line:
            return Sentence(text=line)
    raise ParseError(REASON_EMPTY_REPLY, "reply contains no sentence")


def _parse_ner(raw: str) -> SentenceWithEntities:
    lines = raw.splitlines()
    sentence: str | None = None
    for i, line in enumerate(lines):
        m = _SENTENCE_LINE.match(line)
        if not m:
            continue
        sentence = _strip_quotes(m.group(1))
        for later in lines[i + 1:]:
            em = _ENTITIES_LINE.match(later)
            if em:
                entities = _bracket_items(em.group(1))
                _check_spans(sentence, entities)
                return SentenceWithEntities(text=sentence, entities=entities)
        break
    if sentence is None:
        raise ParseError(REASON_MISSING_SENTENCE, "no 'Sentence:' line found")
    raise ParseError(REASON_MISSING_ENTITIES, "no 'Entities:' line found")


def _parse_attributes(raw: str) -> SentenceWithAttributes:
    lines = raw.splitlines()
    sentence: str | None = None
    attributes: dict[str, tuple[str, ...]] = {}
    for i, line in enumerate(lines):
        m = _SENTENCE_LINE.match(line)
        if not m:
            continue
        sentence = _strip_quotes(m.group(1))
        for later in lines[i + 1:]:
            am = _ATTR_LINE.match(later)
            if not am:
                continue
            cls = am.group(1).strip()
            items = _bracket_items(am.group(2))
            if items and cls.lower() != "sentence":
                attributes[cls] = items
        break
    if sentence is None:
        raise ParseError(REASON_MISSING_SENTENCE, "no 'Sentence:' line found")
    if not attributes:
        raise ParseError(REASON_MISSING_ATTRIBUTES, "no attribute class lines found")
    return SentenceWithAttributes(text=sentence, attributes=attributes)


def parse_reply(family: TaskFamily, raw: str) -> ParsedPayload:
    """Parse one reply per the family's format contract.

    Tolerates surrounding prose: the first matching block wins. NLI replies
    are parsed per step as bare sentences; the Pair payload is assembled by
    the caller from the two steps.
    """
    if not raw or not raw.strip():
        raise ParseError(REASON_EMPTY_REPLY, "reply is empty")
    if family == TaskFamily.NER:
        return _parse_ner(raw)
    if family == TaskFamily.ATTRIBUTE_EXTRACTION:
        return _parse_attributes(raw)
    return _parse_bare_sentence(raw)


def render_payload(payload: ParsedPayload) -> str:
    """Render a payload back into the reply format contract."""
    if isinstance(payload, Sentence):
        return payload.text
    if isinstance(payload, SentenceWithEntities):
        return f"Sentence: {payload.text}\nEntities: [{', '.join(payload.entities)}]"
    if isinstance(payload, SentenceWithAttributes):
        lines = [f"Sentence: {payload.text}"]
        for cls, items in payload.attributes.items():
            lines.append(f"{cls}: [{', '.join(items)}]")
        return "\n".join(lines)
    raise DataError(f"cannot render payload of type {type(payload).__name__}")


def _token_count(text: str) -> int:
    return len(text.split())


_PAYLOAD_FOR_FAMILY = {
    TaskFamily.TEXT_CLASSIFICATION: Sentence,
    TaskFamily.RELATION_EXTRACTION: Sentence,
    TaskFamily.NLI_PAIR: Pair,
    TaskFamily.NER: SentenceWithEntities,
    TaskFamily.ATTRIBUTE_EXTRACTION: SentenceWithAttributes,
}


def validate(task: TaskSpec, payload: ParsedPayload, label: str) -> str | None:
    """Check a parsed payload against the task; returns a rejection reason
    code or None when valid. Never raises."""
    if not isinstance(payload, _PAYLOAD_FOR_FAMILY[task.family]):
        return REASON_FAMILY_MISMATCH
    if label not in task.label_names:
        return REASON_UNKNOWN_LABEL

    texts = (
        (payload.first, payload.second)
        if isinstance(payload, Pair)
        else (payload.text,)
    )
    for text in texts:
        if not text.strip():
            return REASON_EMPTY_TEXT
        if _token_count(text) > MAX_TOKENS_PER_TEXT:
            return REASON_LENGTH

    if isinstance(payload, SentenceWithAttributes):
        known = set(task.attribute_classes or ())
        for cls in payload.attributes:
            if cls not in known:
                return REASON_UNKNOWN_ATTRIBUTE_CLASS
    return None


def derive_entity_spans(text: str, entities: tuple[str, ...] | list[str]) -> list[tuple[int, int, str]]:
    """Character spans for an entity list: case-insensitive longest-match,
    leftmost-first, non-overlapping; ties broken by earliest start."""
    lowered = text.lower()
    candidates: list[tuple[int, int, str]] = []
    for entity in entities:
        needle = entity.lower()
        if not needle:
            continue
        start = 0
        while True:
            pos = lowered.find(needle, start)
            if pos == -1:
                break
            candidates.append((pos, pos + len(needle), entity))
            start = pos + 1
    # Longest first at each position, then scan left to right.
    candidates.sort(key=lambda span: (span[0], -(span[1] - span[0])))
    chosen: list[tuple[int, int, str]] = []
    cursor = -1
    for start, end, entity in candidates:
        if start > cursor:
            chosen.append((start, end, entity))
            cursor = end - 1
    return chosen
