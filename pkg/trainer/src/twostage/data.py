"""Dataset loading for the trainer.

Consumes the generation pipeline's JSONL schema directly (one JSON object
per line; the fields used here are text_primary, text_secondary, label,
entities, attributes, valid). Tokenization is a simple lowercase
word/punctuation split; the vocabulary is built from the training stages.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class TrainerDataError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Example:
    """One training example in trainer-internal form."""

    text_primary: str
    label: str
    text_secondary: str | None = None
    spans: tuple[tuple[int, int, str], ...] = ()  # token-level (start, end, class)


def _span_tokens(value: str) -> list[str]:
    return tokenize(value)


def _find_token_spans(tokens: Sequence[str], value: str, cls: str) -> list[tuple[int, int, str]]:
    needle = _span_tokens(value)
    if not needle:
        return []
    spans = []
    i = 0
    while i + len(needle) <= len(tokens):
        if list(tokens[i : i + len(needle)]) == needle:
            spans.append((i, i + len(needle), cls))
            i += len(needle)
        else:
            i += 1
    return spans


def derive_spans(
    tokens: Sequence[str],
    surfaces: Mapping[str, Iterable[str]],
) -> tuple[tuple[int, int, str], ...]:
    """Token spans for surface strings, longest-match first, non-overlapping."""
    candidates: list[tuple[int, int, str]] = []
    for cls, values in surfaces.items():
        for value in values:
            candidates.extend(_find_token_spans(tokens, value, cls))
    candidates.sort(key=lambda s: (s[0], -(s[1] - s[0])))
    chosen: list[tuple[int, int, str]] = []
    cursor = -1
    for start, end, cls in candidates:
        if start > cursor:
            chosen.append((start, end, cls))
            cursor = end - 1
    return tuple(chosen)


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise TrainerDataError(f"{path}: line {lineno}: {exc.msg}") from exc
    return rows


def load_examples(path: str | Path, token_task: bool) -> list[Example]:
    """Read a core-schema JSONL file into examples, skipping invalid rows."""
    examples = []
    for row in read_jsonl(path):
        if not row.get("valid", True):
            continue
        text = row["text_primary"]
        label = row["label"]
        spans: tuple[tuple[int, int, str], ...] = ()
        if token_task:
            tokens = tokenize(text)
            if row.get("attributes"):
                spans = derive_spans(tokens, row["attributes"])
            elif row.get("entities") is not None:
                spans = derive_spans(tokens, {label: row["entities"]})
        examples.append(
            Example(
                text_primary=text,
                label=label,
                text_secondary=row.get("text_secondary"),
                spans=spans,
            )
        )
    if not examples:
        raise TrainerDataError(f"{path}: no valid examples")
    return examples


@dataclass
class Vocab:
    token_to_id: dict[str, int]

    def __len__(self) -> int:
        return len(self.token_to_id)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        unk = self.token_to_id[UNK]
        return [self.token_to_id.get(tok, unk) for tok in tokens]

    @classmethod
    def build(cls, examples: Iterable[Example]) -> "Vocab":
        seen: dict[str, None] = {}
        for ex in examples:
            for tok in tokenize(ex.text_primary):
                seen.setdefault(tok)
            if ex.text_secondary:
                for tok in tokenize(ex.text_secondary):
                    seen.setdefault(tok)
        token_to_id = {tok: i for i, tok in enumerate(SPECIALS)}
        for tok in sorted(seen):
            token_to_id[tok] = len(token_to_id)
        return cls(token_to_id=token_to_id)


def split_few_shot(examples: list[Example]) -> tuple[list[Example], list[Example]]:
    """Per-label equal split of the few-shot file: first half of each
    label's examples (file order) trains, the second half validates."""
    by_label: dict[str, list[Example]] = {}
    for ex in examples:
        by_label.setdefault(ex.label, []).append(ex)
    train: list[Example] = []
    val: list[Example] = []
    for label in sorted(by_label):
        group = by_label[label]
        half = len(group) // 2
        if half == 0:
            raise TrainerDataError(
                f"label {label!r} has {len(group)} example(s); need at least 2"
                " for an equal train/validation split"
            )
        train.extend(group[:half])
        val.extend(group[half:])
    return train, val


def bio_labels(span_classes: Sequence[str]) -> list[str]:
    out = ["O"]
    for cls in span_classes:
        out.extend((f"B-{cls}", f"I-{cls}"))
    return out


def spans_to_bio(length: int, spans: Iterable[tuple[int, int, str]]) -> list[str]:
    tags = ["O"] * length
    for start, end, cls in spans:
        if start >= length:
            continue
        tags[start] = f"B-{cls}"
        for i in range(start + 1, min(end, length)):
            tags[i] = f"I-{cls}"
    return tags


def bio_to_spans(tags: Sequence[str]) -> set[tuple[int, int, str]]:
    spans = set()
    start = None
    cls = None
    for i, tag in enumerate(tags):
        if tag.startswith("B-"):
            if start is not None:
                spans.add((start, i, cls))
            start, cls = i, tag[2:]
        elif tag.startswith("I-") and start is not None and tag[2:] == cls:
            continue
        else:
            if start is not None:
                spans.add((start, i, cls))
            start, cls = None, None
            if tag.startswith("I-"):
                # orphan I- tag: treat as a fresh single-token span
                start, cls = i, tag[2:]
    if start is not None:
        spans.add((start, len(tags), cls))
    return spans
