"""Prompt composition: instantiate task-family templates with a sampled
topic, a sampled writing style, and a target label.

Template bodies are data (one text file per family/mode/step), so new task
families need no code change. Knowledge-infused mode injects [topic] and
[style]; the Plain and Demo baseline modes use the unguided bodies, with
Demo appending rendered few-shot demonstrations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping

from .core import (
    FewShotSet,
    LabelDef,
    PromptMode,
    TaskFamily,
    TaskSpec,
    Topic,
    TopicKind,
    sha256_hex,
)
from .errors import ConfigError, DataError

KNOWN_SLOTS = frozenset(
    {
        "domain", "content", "topic", "topic0", "topic1", "style",
        "class_name", "label_desc", "entity0", "entity1",
        "first_sentence", "task", "demonstrations", "entity_type",
    }
)

_SLOT_RE = re.compile(r"\[([a-z_0-9]+)\]")


class PairStep(str, Enum):
    SINGLE = "Single"
    PAIR_FIRST = "PairFirst"
    PAIR_SECOND = "PairSecond"


_FAMILY_KEY = {
    TaskFamily.NER: "ner",
    TaskFamily.ATTRIBUTE_EXTRACTION: "attr",
    TaskFamily.TEXT_CLASSIFICATION: "textclass",
    TaskFamily.RELATION_EXTRACTION: "relation",
    TaskFamily.NLI_PAIR: "nli",
}

_MODE_KEY = {
    PromptMode.KNOWLEDGE_INFUSED: "knowledge",
    PromptMode.PLAIN: "plain",
    PromptMode.DEMO: "demo",
}

_STEP_KEY = {
    PairStep.SINGLE: "single",
    PairStep.PAIR_FIRST: "pair_first",
    PairStep.PAIR_SECOND: "pair_second",
}

# Slots each (family, step) may legitimately bind in knowledge-infused mode.
_BASE_SLOTS: dict[tuple[TaskFamily, PairStep], frozenset[str]] = {
    (TaskFamily.NER, PairStep.SINGLE): frozenset({"domain", "topic", "style"}),
    (TaskFamily.ATTRIBUTE_EXTRACTION, PairStep.SINGLE): frozenset({"topic", "style"}),
    (TaskFamily.TEXT_CLASSIFICATION, PairStep.SINGLE): frozenset(
        {"domain", "class_name", "topic", "style"}
    ),
    (TaskFamily.RELATION_EXTRACTION, PairStep.SINGLE): frozenset(
        {"domain", "class_name", "entity0", "entity1", "topic0", "topic1", "label_desc", "style"}
    ),
    (TaskFamily.NLI_PAIR, PairStep.PAIR_FIRST): frozenset({"content", "topic", "style"}),
    (TaskFamily.NLI_PAIR, PairStep.PAIR_SECOND): frozenset(
        {"domain", "class_name", "content", "topic", "label_desc", "first_sentence", "style"}
    ),
}

_KNOWLEDGE_ONLY = frozenset({"topic", "topic0", "topic1", "style"})


def steps_for(family: TaskFamily) -> tuple[PairStep, ...]:
    if family == TaskFamily.NLI_PAIR:
        return (PairStep.PAIR_FIRST, PairStep.PAIR_SECOND)
    return (PairStep.SINGLE,)


def slots_in(body: str) -> set[str]:
    return {name for name in _SLOT_RE.findall(body) if name in KNOWN_SLOTS}


def allowed_slots(family: TaskFamily, mode: PromptMode, step: PairStep) -> frozenset[str]:
    base = _BASE_SLOTS[(family, step)]
    if mode == PromptMode.KNOWLEDGE_INFUSED:
        return base
    reduced = base - _KNOWLEDGE_ONLY
    if mode == PromptMode.DEMO:
        return reduced | {"demonstrations"}
    return reduced


@dataclass(frozen=True)
class PromptTemplate:
    family: TaskFamily
    mode: PromptMode
    step: PairStep
    body: str

    def validate(self) -> None:
        used = slots_in(self.body)
        allowed = allowed_slots(self.family, self.mode, self.step)
        extra = used - allowed
        if extra:
            raise ConfigError(
                f"template {self.family.value}/{self.mode.value}/{self.step.value}:"
                f" unresolvable slot(s) {sorted(extra)}"
            )
        if self.mode == PromptMode.KNOWLEDGE_INFUSED and self.step != PairStep.PAIR_SECOND:
            # The second pair prompt mimics the first sentence's style instead.
            if "style" not in used:
                raise ConfigError(
                    f"knowledge-infused template {self.family.value}/{self.step.value}"
                    " must contain [style]"
                )
        if self.mode == PromptMode.PLAIN:
            banned = used & _KNOWLEDGE_ONLY
            if banned:
                raise ConfigError(
                    f"plain template {self.family.value}/{self.step.value}"
                    f" must not contain {sorted(banned)}"
                )


@dataclass(frozen=True)
class ComposedPrompt:
    """A fully instantiated generation prompt plus its binding provenance."""

    text: str
    family: TaskFamily
    mode: PromptMode
    step: PairStep
    bindings: Mapping[str, str]
    sha256: str


@dataclass(frozen=True)
class PairPlan:
    """Two-step NLI plan: the first prompt now, the second built from the
    realized first sentence."""

    first: ComposedPrompt
    second: Callable[[str], ComposedPrompt] = field(repr=False, compare=False)


class TemplatePack:
    """A directory of template bodies, validated for slot closure at load."""

    def __init__(self, templates: dict[tuple[TaskFamily, PromptMode, PairStep], PromptTemplate],
                 extras: dict[str, str]):
        self._templates = templates
        self._extras = extras
        for template in templates.values():
            template.validate()

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "TemplatePack":
        if directory is None:
            root = resources.files("kitgen").joinpath("templates")
        else:
            root = Path(directory)
        templates: dict[tuple[TaskFamily, PromptMode, PairStep], PromptTemplate] = {}
        for family in TaskFamily:
            for mode in PromptMode:
                for step in steps_for(family):
                    name = f"{_FAMILY_KEY[family]}.{_MODE_KEY[mode]}.{_STEP_KEY[step]}.txt"
                    entry = root.joinpath(name) if directory is None else root / name
                    try:
                        body = entry.read_text(encoding="utf-8").rstrip("\n")
                    except (FileNotFoundError, OSError) as exc:
                        raise ConfigError(f"template pack is missing {name}") from exc
                    templates[(family, mode, step)] = PromptTemplate(family, mode, step, body)
        extras = {}
        for name in ("elicit_topics", "elicit_styles"):
            entry = root.joinpath(f"{name}.txt") if directory is None else root / f"{name}.txt"
            try:
                extras[name] = entry.read_text(encoding="utf-8").rstrip("\n")
            except (FileNotFoundError, OSError) as exc:
                raise ConfigError(f"template pack is missing {name}.txt") from exc
        return cls(templates, extras)

    def template(self, family: TaskFamily, mode: PromptMode, step: PairStep) -> PromptTemplate:
        return self._templates[(family, mode, step)]

    def raw(self, name: str) -> str:
        return self._extras[name]


_default_pack: TemplatePack | None = None


def default_pack() -> TemplatePack:
    global _default_pack
    if _default_pack is None:
        _default_pack = TemplatePack.load()
    return _default_pack


def substitute(body: str, bindings: Mapping[str, str]) -> str:
    """Fill every slot in the body; unresolved known slots are an error."""
    text = body
    for name, value in bindings.items():
        text = text.replace(f"[{name}]", value)
    leftover = slots_in(text)
    if leftover:
        raise DataError(f"unresolved slot(s) {sorted(leftover)} in prompt")
    return text


def render_demonstrations(demos: FewShotSet) -> str:
    """Render few-shot examples: one block per example, texts then label."""
    if not demos.examples:
        raise DataError("demonstrations must be non-empty")
    blocks = []
    for ex in demos.examples:
        lines = list(ex.texts)
        lines.append(f"Label: {ex.label}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def _context_bindings(
    task: TaskSpec,
    label: LabelDef,
    topic: Topic | None,
    style: str | None,
    demos: FewShotSet | None,
    first_sentence: str | None,
) -> dict[str, str]:
    bindings: dict[str, str] = {
        "domain": task.domain_phrase,
        "class_name": label.name,
        "label_desc": label.description,
        "task": task.id,
    }
    if task.content_phrase is not None:
        bindings["content"] = task.content_phrase
    if task.entity_roles is not None:
        bindings["entity0"], bindings["entity1"] = task.entity_roles
    if topic is not None:
        bindings["topic"] = topic.primary_name
        if topic.kind == TopicKind.ENTITY_PAIR:
            bindings["topic0"] = topic.primary_name
            bindings["topic1"] = topic.secondary_name or ""
    if style is not None:
        bindings["style"] = style
    if demos is not None:
        bindings["demonstrations"] = render_demonstrations(demos)
    if first_sentence is not None:
        bindings["first_sentence"] = first_sentence
    return bindings


def _instantiate(
    template: PromptTemplate, bindings: Mapping[str, str]
) -> ComposedPrompt:
    used = slots_in(template.body)
    missing = [s for s in sorted(used) if s not in bindings]
    if missing:
        raise DataError(f"no binding for slot(s) {missing}")
    text = substitute(template.body, {k: bindings[k] for k in used})
    return ComposedPrompt(
        text=text,
        family=template.family,
        mode=template.mode,
        step=template.step,
        bindings=dict(bindings),
        sha256=sha256_hex(text),
    )


def compose(
    task: TaskSpec,
    label: LabelDef,
    topic: Topic | None = None,
    style: str | None = None,
    mode: PromptMode = PromptMode.KNOWLEDGE_INFUSED,
    demos: FewShotSet | None = None,
    first_sentence: str | None = None,
    rng=None,
    pack: TemplatePack | None = None,
) -> ComposedPrompt | PairPlan:
    """Instantiate the template for (task.family, mode).

    For NLIPair a :class:`PairPlan` is returned: the first prompt plus a
    builder for the second prompt that takes the realized first sentence.
    ``rng`` is accepted for interface stability; composition draws nothing.
    """
    pack = pack or default_pack()
    if mode == PromptMode.KNOWLEDGE_INFUSED:
        if topic is None:
            raise DataError("knowledge-infused mode requires a topic")
        wants_pair = task.family == TaskFamily.RELATION_EXTRACTION
        if wants_pair and topic.kind != TopicKind.ENTITY_PAIR:
            raise DataError(
                f"task family {task.family.value} requires an EntityPair topic,"
                f" got {topic.kind.value}"
            )
        if not wants_pair and topic.kind != TopicKind.ENTITY:
            raise DataError(
                f"task family {task.family.value} requires an Entity topic,"
                f" got {topic.kind.value}"
            )
        if style is None:
            raise DataError("knowledge-infused mode requires a style")
    if mode == PromptMode.DEMO and demos is None:
        raise DataError("demo mode requires demonstrations")

    bindings = _context_bindings(task, label, topic, style, demos, first_sentence)

    if task.family != TaskFamily.NLI_PAIR:
        template = pack.template(task.family, mode, PairStep.SINGLE)
        return _instantiate(template, bindings)

    first_template = pack.template(task.family, mode, PairStep.PAIR_FIRST)
    second_template = pack.template(task.family, mode, PairStep.PAIR_SECOND)
    first = _instantiate(first_template, bindings)

    def build_second(first_sentence: str) -> ComposedPrompt:
        second_bindings = dict(bindings)
        second_bindings["first_sentence"] = first_sentence
        return _instantiate(second_template, second_bindings)

    return PairPlan(first=first, second=build_second)
