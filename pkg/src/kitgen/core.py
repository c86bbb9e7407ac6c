"""Shared domain types, the canonical JSONL dataset schema, and seeded RNG.

Every other module builds on the types defined here. Records are immutable
after construction and the JSONL writer emits fields in a fixed order so
that equal inputs always produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import DataError

__version__ = "0.1.0"


class TaskFamily(str, Enum):
    TEXT_CLASSIFICATION = "TextClassification"
    RELATION_EXTRACTION = "RelationExtraction"
    NLI_PAIR = "NLIPair"
    NER = "NER"
    ATTRIBUTE_EXTRACTION = "AttributeExtraction"


class PromptMode(str, Enum):
    KNOWLEDGE_INFUSED = "KnowledgeInfused"
    PLAIN = "Plain"
    DEMO = "Demo"


class TopicKind(str, Enum):
    ENTITY = "Entity"
    ENTITY_PAIR = "EntityPair"


class TopicSource(str, Enum):
    KG = "KG"
    LLM = "LLM"


@dataclass(frozen=True)
class LabelDef:
    """A class label and the description used to fill [label_desc]."""

    name: str
    description: str = ""


@dataclass(frozen=True)
class TaskSpec:
    """Declarative description of a task family and its prompt-slot phrases.

    ``domain_phrase`` fills [domain]; ``content_phrase`` fills [content]
    (sentence-pair tasks only); ``entity_roles`` fill [entity0]/[entity1]
    (relation extraction only); ``topic_entity_types`` names the entity
    types whose candidate topics feed [topic].
    """

    id: str
    family: TaskFamily
    domain_phrase: str = ""
    content_phrase: str | None = None
    labels: tuple[LabelDef, ...] = ()
    entity_roles: tuple[str, str] | None = None
    attribute_classes: tuple[str, ...] | None = None
    topic_entity_types: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.labels:
            raise DataError(f"task {self.id!r}: labels must be non-empty")
        names = [lab.name for lab in self.labels]
        if len(set(names)) != len(names):
            raise DataError(f"task {self.id!r}: duplicate label names")
        if (self.family == TaskFamily.RELATION_EXTRACTION) != (self.entity_roles is not None):
            raise DataError(
                f"task {self.id!r}: entity_roles present iff family is RelationExtraction"
            )
        if self.entity_roles is not None and len(self.entity_roles) != 2:
            raise DataError(f"task {self.id!r}: entity_roles must have length 2")
        if (self.family == TaskFamily.ATTRIBUTE_EXTRACTION) != (self.attribute_classes is not None):
            raise DataError(
                f"task {self.id!r}: attribute_classes present iff family is AttributeExtraction"
            )
        if (self.family == TaskFamily.NLI_PAIR) != (self.content_phrase is not None):
            raise DataError(f"task {self.id!r}: content_phrase present iff family is NLIPair")

    @property
    def label_names(self) -> tuple[str, ...]:
        return tuple(lab.name for lab in self.labels)

    def label(self, name: str) -> LabelDef:
        for lab in self.labels:
            if lab.name == name:
                return lab
        raise DataError(f"task {self.id!r}: unknown label {name!r}")


@dataclass(frozen=True)
class FewShotExample:
    """One seed example: 1 or 2 texts, a label, optional span annotations."""

    texts: tuple[str, ...]
    label: str
    annotations: Mapping[str, Any] | None = None

    def __post_init__(self) -> None:
        if len(self.texts) not in (1, 2):
            raise DataError("example must carry 1 or 2 texts")


@dataclass(frozen=True)
class FewShotSet:
    """The K seed examples available for a task (default 5 per label)."""

    task_id: str
    examples: tuple[FewShotExample, ...]
    shots_per_label: int = 5

    def validate_against(self, task: TaskSpec) -> None:
        known = set(task.label_names)
        counts: dict[str, int] = {}
        for ex in self.examples:
            if ex.label not in known:
                raise DataError(
                    f"few-shot example label {ex.label!r} not in task {task.id!r} label set"
                )
            counts[ex.label] = counts.get(ex.label, 0) + 1
        bad = {lab: n for lab, n in counts.items() if n != self.shots_per_label}
        if bad:
            raise DataError(
                f"per-label example counts {bad} do not match shots_per_label={self.shots_per_label}"
            )


@dataclass(frozen=True)
class Topic:
    """A knowledge unit injected into a prompt: an entity or a related pair."""

    kind: TopicKind
    primary_name: str
    secondary_name: str | None = None
    relation: str | None = None
    entity_type: str = ""
    source: TopicSource = TopicSource.KG

    def __post_init__(self) -> None:
        if (self.kind == TopicKind.ENTITY_PAIR) != (self.secondary_name is not None):
            raise DataError("kind is EntityPair iff secondary_name is present")


@dataclass(frozen=True)
class TokenUsage:
    """Prompt/completion token counts reported by the LLM endpoint."""

    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise DataError("token counts must be non-negative")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )


@dataclass(frozen=True)
class SyntheticRecord:
    """One validated generated example with full provenance."""

    record_id: str
    task_id: str
    label: str
    text_primary: str
    text_secondary: str | None = None
    entities: tuple[str, ...] | None = None
    attributes: Mapping[str, tuple[str, ...]] | None = None
    topic: Topic | None = None
    style: str = ""
    prompt_mode: PromptMode = PromptMode.KNOWLEDGE_INFUSED
    prompt_sha256: str = ""
    model_id: str = ""
    usage: TokenUsage = field(default_factory=TokenUsage)
    valid: bool = True
    rejection_reason: str | None = None

    def __post_init__(self) -> None:
        if self.valid and not self.text_primary:
            raise DataError(f"record {self.record_id}: valid record with empty text_primary")


@dataclass(frozen=True)
class SeededRng:
    """Root of all randomness: counter-based substreams keyed on the seed.

    ``stream(*key)`` returns an independent generator for any integer key
    tuple, so per-record streams are identical regardless of execution
    order or concurrency.
    """

    seed: int

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise DataError("seed must be a 64-bit unsigned integer")

    def stream(self, *key: int) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(key))
        return np.random.default_rng(seq)


def record_id_for(seed: int, index: int) -> str:
    """Stable record id: lowercase hex of a 64-bit hash of (seed, index)."""
    digest = hashlib.blake2b(struct.pack("<QQ", seed, index), digest_size=8)
    return digest.hexdigest()


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# JSONL schema: field order is part of the format contract. Optional fields
# are omitted when absent rather than written as null.
_RECORD_FIELD_ORDER = (
    "record_id",
    "task_id",
    "label",
    "text_primary",
    "text_secondary",
    "entities",
    "attributes",
    "topic",
    "style",
    "prompt_mode",
    "prompt_sha256",
    "model_id",
    "usage",
    "valid",
    "rejection_reason",
)

_TOPIC_FIELD_ORDER = ("kind", "primary_name", "secondary_name", "relation", "entity_type", "source")

_REQUIRED_FIELDS = frozenset(
    {"record_id", "task_id", "label", "text_primary", "style", "prompt_mode",
     "prompt_sha256", "model_id", "usage", "valid"}
)


def record_to_dict(record: SyntheticRecord) -> dict[str, Any]:
    """Serialize a record into a plain dict with the documented field order."""
    out: dict[str, Any] = {}
    for name in _RECORD_FIELD_ORDER:
        value = getattr(record, name)
        if value is None:
            continue
        if name == "topic":
            topic = {k: getattr(value, k) for k in _TOPIC_FIELD_ORDER}
            out[name] = {
                k: (v.value if isinstance(v, Enum) else v)
                for k, v in topic.items()
                if v is not None
            }
        elif name == "usage":
            out[name] = {
                "prompt_tokens": value.prompt_tokens,
                "completion_tokens": value.completion_tokens,
            }
        elif name == "entities":
            out[name] = list(value)
        elif name == "attributes":
            out[name] = {k: list(v) for k, v in value.items()}
        elif isinstance(value, Enum):
            out[name] = value.value
        else:
            out[name] = value
    return out


def record_from_dict(data: Mapping[str, Any]) -> SyntheticRecord:
    """Inverse of :func:`record_to_dict`; raises DataError on schema violations."""
    unknown = set(data) - set(_RECORD_FIELD_ORDER)
    if unknown:
        raise DataError(f"unknown fields: {sorted(unknown)}")
    missing = _REQUIRED_FIELDS - set(data)
    if missing:
        raise DataError(f"missing required fields: {sorted(missing)}")
    topic = None
    if "topic" in data:
        t = dict(data["topic"])
        extra = set(t) - set(_TOPIC_FIELD_ORDER)
        if extra:
            raise DataError(f"unknown topic fields: {sorted(extra)}")
        topic = Topic(
            kind=TopicKind(t["kind"]),
            primary_name=t["primary_name"],
            secondary_name=t.get("secondary_name"),
            relation=t.get("relation"),
            entity_type=t.get("entity_type", ""),
            source=TopicSource(t.get("source", "KG")),
        )
    usage = data["usage"]
    attributes = data.get("attributes")
    return SyntheticRecord(
        record_id=data["record_id"],
        task_id=data["task_id"],
        label=data["label"],
        text_primary=data["text_primary"],
        text_secondary=data.get("text_secondary"),
        entities=tuple(data["entities"]) if "entities" in data else None,
        attributes={k: tuple(v) for k, v in attributes.items()} if attributes is not None else None,
        topic=topic,
        style=data["style"],
        prompt_mode=PromptMode(data["prompt_mode"]),
        prompt_sha256=data["prompt_sha256"],
        model_id=data["model_id"],
        usage=TokenUsage(usage["prompt_tokens"], usage["completion_tokens"]),
        valid=data["valid"],
        rejection_reason=data.get("rejection_reason"),
    )


def write_dataset(records: Iterable[SyntheticRecord], path: str | Path) -> None:
    """Write records as UTF-8 JSONL, one object per line, fixed field order.

    Record ids must be unique within a dataset.
    """
    path = Path(path)
    seen: set[str] = set()
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            if record.record_id in seen:
                raise DataError(f"duplicate record_id {record.record_id!r}")
            seen.add(record.record_id)
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False))
            fh.write("\n")


@dataclass(frozen=True)
class LineError:
    """A per-line read failure: line number (1-based) and reason."""

    line: int
    reason: str


def read_dataset_with_errors(path: str | Path) -> tuple[list[SyntheticRecord], list[LineError]]:
    """Lenient read: returns records in file order plus per-line errors."""
    path = Path(path)
    records: list[SyntheticRecord] = []
    problems: list[LineError] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(LineError(lineno, f"invalid JSON: {exc.msg}"))
                continue
            try:
                records.append(record_from_dict(data))
            except (DataError, KeyError, TypeError, ValueError) as exc:
                problems.append(LineError(lineno, str(exc)))
    return records, problems


def read_dataset(path: str | Path, *, strict: bool = True) -> list[SyntheticRecord]:
    """Read a JSONL dataset; in strict mode any malformed line is fatal."""
    records, problems = read_dataset_with_errors(path)
    if strict and problems:
        detail = "; ".join(f"line {p.line}: {p.reason}" for p in problems[:10])
        raise DataError(f"{path}: {len(problems)} malformed line(s): {detail}")
    return records


def _label_defs(raw: Iterable[Mapping[str, Any]]) -> tuple[LabelDef, ...]:
    return tuple(LabelDef(name=lab["name"], description=lab.get("description", "")) for lab in raw)


def task_spec_from_dict(data: Mapping[str, Any]) -> TaskSpec:
    try:
        family = TaskFamily(data["family"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"task spec {data.get('id')!r}: bad family: {exc}") from exc
    entity_roles = data.get("entity_roles")
    attribute_classes = data.get("attribute_classes")
    return TaskSpec(
        id=data["id"],
        family=family,
        domain_phrase=data.get("domain_phrase", ""),
        content_phrase=data.get("content_phrase"),
        labels=_label_defs(data.get("labels", ())),
        entity_roles=tuple(entity_roles) if entity_roles is not None else None,
        attribute_classes=tuple(attribute_classes) if attribute_classes is not None else None,
        topic_entity_types=tuple(data.get("topic_entity_types", ())),
    )


def load_task_specs(path: str | Path) -> dict[str, TaskSpec]:
    """Load task specs from a JSON file holding one spec or a list of specs."""
    with Path(path).open("r", encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, Mapping) and "tasks" in data:
        data = data["tasks"]
    if isinstance(data, Mapping):
        data = [data]
    specs: dict[str, TaskSpec] = {}
    for entry in data:
        spec = task_spec_from_dict(entry)
        if spec.id in specs:
            raise DataError(f"duplicate task id {spec.id!r} in {path}")
        specs[spec.id] = spec
    return specs


def few_shot_from_dict(data: Mapping[str, Any]) -> FewShotSet:
    examples = tuple(
        FewShotExample(
            texts=tuple(ex["texts"]),
            label=ex["label"],
            annotations=ex.get("annotations"),
        )
        for ex in data["examples"]
    )
    return FewShotSet(
        task_id=data["task_id"],
        examples=examples,
        shots_per_label=data.get("shots_per_label", 5),
    )


def load_few_shot(path: str | Path) -> FewShotSet:
    with Path(path).open("r", encoding="utf-8") as fh:
        return few_shot_from_dict(json.load(fh))
