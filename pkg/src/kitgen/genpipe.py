"""End-to-end dataset synthesis: sample label/topic/style per record,
compose and complete the prompt (two sequential completions for sentence
pairs), parse and validate, retry invalid outputs, and emit JSONL plus a
run manifest.

All randomness is pre-derived per slot from counter-based substreams, so
output is identical regardless of in-flight concurrency; invalid slots are
regenerated up to a bounded number of attempts and then dropped with the
reason recorded in the manifest.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from decimal import Decimal
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from . import core
from .core import (
    FewShotSet,
    PromptMode,
    SeededRng,
    SyntheticRecord,
    TaskFamily,
    TaskSpec,
    TokenUsage,
    Topic,
    TopicKind,
    TopicSource,
    record_id_for,
    sha256_hex,
)
from .elicit import CandidateSet
from .errors import DataError, TransportError
from .kg import KnowledgeGraph, normalize_surface, sample_entity_topics, sample_pair_topics
from .llmclient import Backend, GenerationParams, PriceTable, cost_of
from .parsing import (
    Pair,
    ParseError,
    REASON_TRANSPORT,
    parse_reply,
    validate,
)
from .promptkit import PairPlan, TemplatePack, compose, default_pack

logger = logging.getLogger(__name__)

# Substream channels within one (slot, attempt).
_CH_TOPIC = 0
_CH_STYLE = 1
_CH_COMPLETE_FIRST = 2
_CH_COMPLETE_SECOND = 3


@dataclass(frozen=True)
class RunConfig:
    """Generation run settings. Defaults: 5000 records, 5 shots per
    label, temperature/top_p 1.0 (in params), 3 regeneration attempts."""

    task_id: str
    params: GenerationParams
    seed: int
    n_total: int = 5000
    shots_per_label: int = 5
    mode: PromptMode = PromptMode.KNOWLEDGE_INFUSED
    topic_source: TopicSource = TopicSource.KG
    max_regen_attempts: int = 3
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.n_total < 1:
            raise DataError("n_total must be >= 1")
        if self.max_regen_attempts < 1:
            raise DataError("max_regen_attempts must be >= 1")


@dataclass
class RunManifest:
    """Audit trail: configuration snapshot, provenance, accounting."""

    tool_version: str
    seed: int
    config: dict
    topic_provenance: str | None
    style_provenance: str | None
    requested: int
    valid: int
    rejected_final: int
    rejected_by_reason: dict[str, int]
    prompt_tokens: int
    completion_tokens: int
    total_cost_usd: str | None
    duration_s: float
    incomplete: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")


class GenerationAborted(TransportError):
    """A client hard failure stopped the run; partial output was flushed."""

    def __init__(self, message: str, records: list[SyntheticRecord], manifest: RunManifest):
        super().__init__(message)
        self.records = records
        self.manifest = manifest


class TopicProvider(Protocol):
    def sample(self, task: TaskSpec, label_name: str, rng: np.random.Generator) -> Topic: ...

    def fingerprint(self) -> str: ...


_NEGATIVE_LABEL_KEYS = frozenset({"no relation", "none", "negative", "false", "unrelated"})


def is_negative_relation_label(name: str) -> bool:
    return normalize_surface(name).replace("_", " ") in _NEGATIVE_LABEL_KEYS


def _pick(rng: np.random.Generator, items) -> object:
    return items[int(rng.integers(0, len(items)))]


@dataclass
class KgTopicProvider:
    """Topics drawn from a knowledge graph: single entities for most
    families; related edges for relation extraction, except negative
    classes where two entities are paired independently."""

    kg: KnowledgeGraph

    def _types(self, task: TaskSpec) -> tuple[str, ...]:
        if not task.topic_entity_types:
            raise DataError(f"task {task.id!r} lists no topic_entity_types")
        return task.topic_entity_types

    def sample(self, task: TaskSpec, label_name: str, rng: np.random.Generator) -> Topic:
        types = self._types(task)
        if task.family == TaskFamily.RELATION_EXTRACTION:
            head_type, tail_type = types[0], types[-1]
            if is_negative_relation_label(label_name):
                head = sample_entity_topics(self.kg, head_type, 1, rng)[0]
                tail = sample_entity_topics(self.kg, tail_type, 1, rng)[0]
                return Topic(
                    kind=TopicKind.ENTITY_PAIR,
                    primary_name=head.primary_name,
                    secondary_name=tail.primary_name,
                    entity_type=f"{head_type}/{tail_type}",
                    source=TopicSource.KG,
                )
            return sample_pair_topics(self.kg, head_type, "*", tail_type, 1, rng)[0]
        entity_type = str(_pick(rng, types))
        return sample_entity_topics(self.kg, entity_type, 1, rng)[0]

    def fingerprint(self) -> str:
        return self.kg.fingerprint()


@dataclass
class CandidateTopicProvider:
    """Topics drawn from LLM-elicited candidate sets, keyed by entity type."""

    sets: Mapping[str, CandidateSet]

    def _set_for(self, entity_type: str) -> CandidateSet:
        try:
            return self.sets[entity_type]
        except KeyError:
            raise DataError(
                f"no candidate set for entity type {entity_type!r}"
                f" (have {sorted(self.sets)})"
            ) from None

    def _draw(self, entity_type: str, rng: np.random.Generator) -> str:
        cset = self._set_for(entity_type)
        if not cset.items:
            raise DataError(f"candidate set for {entity_type!r} is empty")
        return str(_pick(rng, cset.items))

    def sample(self, task: TaskSpec, label_name: str, rng: np.random.Generator) -> Topic:
        if not task.topic_entity_types:
            raise DataError(f"task {task.id!r} lists no topic_entity_types")
        types = task.topic_entity_types
        if task.family == TaskFamily.RELATION_EXTRACTION:
            head_type, tail_type = types[0], types[-1]
            return Topic(
                kind=TopicKind.ENTITY_PAIR,
                primary_name=self._draw(head_type, rng),
                secondary_name=self._draw(tail_type, rng),
                entity_type=f"{head_type}/{tail_type}",
                source=TopicSource.LLM,
            )
        entity_type = str(_pick(rng, types))
        return Topic(
            kind=TopicKind.ENTITY,
            primary_name=self._draw(entity_type, rng),
            entity_type=entity_type,
            source=TopicSource.LLM,
        )

    def fingerprint(self) -> str:
        parts = []
        for etype in sorted(self.sets):
            items = "\n".join(normalize_surface(i) for i in self.sets[etype].items)
            parts.append(f"{etype}\n{items}")
        return sha256_hex("\x00".join(parts))


def make_topic_provider(source: KnowledgeGraph | CandidateSet | Mapping[str, CandidateSet]) -> TopicProvider:
    if isinstance(source, KnowledgeGraph):
        return KgTopicProvider(kg=source)
    if isinstance(source, CandidateSet):
        key = source.entity_type or "default"
        return CandidateTopicProvider(sets={key: source})
    return CandidateTopicProvider(sets=dict(source))


def styles_fingerprint(styles: CandidateSet | None) -> str | None:
    if styles is None:
        return None
    return sha256_hex("\n".join(normalize_surface(s) for s in styles.items))


@dataclass
class _SlotOutcome:
    slot: int
    record: SyntheticRecord | None
    reason: str | None
    usage: TokenUsage
    attempts_used: int


def _slot_plan(
    config: RunConfig,
    task: TaskSpec,
    topics: TopicProvider | None,
    styles: CandidateSet | None,
    demos: FewShotSet | None,
    pack: TemplatePack,
    slot: int,
    attempt: int,
):
    """Derive the (label, topic, style, composed prompt) for one attempt.

    Deterministic in (seed, slot, attempt); exposed for fault-injection
    oracles in tests.
    """
    base = SeededRng(config.seed)
    label = task.labels[slot % len(task.labels)]
    topic = style = None
    if config.mode == PromptMode.KNOWLEDGE_INFUSED:
        topic = topics.sample(task, label.name, base.stream(slot, attempt, _CH_TOPIC))
        style_rng = base.stream(slot, attempt, _CH_STYLE)
        style = str(_pick(style_rng, styles.items))
    composed = compose(
        task, label, topic=topic, style=style, mode=config.mode, demos=demos, pack=pack
    )
    return label, topic, style, composed


def _run_slot(
    config: RunConfig,
    task: TaskSpec,
    topics: TopicProvider | None,
    styles: CandidateSet | None,
    demos: FewShotSet | None,
    client: Backend,
    pack: TemplatePack,
    slot: int,
) -> _SlotOutcome:
    base = SeededRng(config.seed)
    spent = TokenUsage()
    reason: str | None = None
    for attempt in range(config.max_regen_attempts):
        label, topic, style, composed = _slot_plan(
            config, task, topics, styles, demos, pack, slot, attempt
        )
        try:
            if isinstance(composed, PairPlan):
                first_res = client.complete(
                    composed.first, config.params,
                    rng=base.stream(slot, attempt, _CH_COMPLETE_FIRST),
                )
                spent = spent + first_res.usage
                first_payload = parse_reply(task.family, first_res.text)
                second_prompt = composed.second(first_payload.text)
                second_res = client.complete(
                    second_prompt, config.params,
                    rng=base.stream(slot, attempt, _CH_COMPLETE_SECOND),
                )
                spent = spent + second_res.usage
                second_payload = parse_reply(task.family, second_res.text)
                payload = Pair(first=first_payload.text, second=second_payload.text)
                attempt_usage = first_res.usage + second_res.usage
                prompt_sha = composed.first.sha256
            else:
                result = client.complete(
                    composed, config.params,
                    rng=base.stream(slot, attempt, _CH_COMPLETE_FIRST),
                )
                spent = spent + result.usage
                payload = parse_reply(task.family, result.text)
                attempt_usage = result.usage
                prompt_sha = composed.sha256
        except ParseError as exc:
            reason = exc.reason
            continue

        reason = validate(task, payload, label.name)
        if reason is not None:
            continue

        record = SyntheticRecord(
            record_id=record_id_for(config.seed, slot),
            task_id=task.id,
            label=label.name,
            text_primary=payload.first if isinstance(payload, Pair) else payload.text,
            text_secondary=payload.second if isinstance(payload, Pair) else None,
            entities=getattr(payload, "entities", None),
            attributes=getattr(payload, "attributes", None),
            topic=topic,
            style=style or "",
            prompt_mode=config.mode,
            prompt_sha256=prompt_sha,
            model_id=config.params.model_id,
            usage=attempt_usage,
            valid=True,
        )
        return _SlotOutcome(slot, record, None, spent, attempt + 1)
    return _SlotOutcome(slot, None, reason or REASON_TRANSPORT, spent, config.max_regen_attempts)


def _finalize(
    config: RunConfig,
    outcomes: list[_SlotOutcome],
    topics: TopicProvider | None,
    styles: CandidateSet | None,
    price_table: PriceTable | None,
    started: float,
    incomplete: bool,
) -> tuple[list[SyntheticRecord], RunManifest]:
    records = [o.record for o in sorted(outcomes, key=lambda o: o.slot) if o.record is not None]
    rejected: dict[str, int] = {}
    usage = TokenUsage()
    for outcome in outcomes:
        usage = usage + outcome.usage
        if outcome.record is None and outcome.reason:
            rejected[outcome.reason] = rejected.get(outcome.reason, 0) + 1
    cost: str | None = None
    if price_table is not None:
        total = Decimal(0)
        for outcome in outcomes:
            total += cost_of(outcome.usage, config.params.model_id, price_table)
        cost = str(total)
    config_snapshot = {
        "task_id": config.task_id,
        "n_total": config.n_total,
        "shots_per_label": config.shots_per_label,
        "mode": config.mode.value,
        "topic_source": config.topic_source.value,
        "seed": config.seed,
        "max_regen_attempts": config.max_regen_attempts,
        "max_in_flight": config.max_in_flight,
        "model_id": config.params.model_id,
        "temperature": config.params.temperature,
        "top_p": config.params.top_p,
        "max_output_tokens": config.params.max_output_tokens,
    }
    manifest = RunManifest(
        tool_version=core.__version__,
        seed=config.seed,
        config=config_snapshot,
        topic_provenance=topics.fingerprint() if topics is not None else None,
        style_provenance=styles_fingerprint(styles),
        requested=config.n_total if not incomplete else len(outcomes),
        valid=len(records),
        rejected_final=sum(rejected.values()),
        rejected_by_reason=rejected,
        prompt_tokens=usage.prompt_tokens,
        completion_tokens=usage.completion_tokens,
        total_cost_usd=cost,
        duration_s=round(time.monotonic() - started, 3),
        incomplete=incomplete,
    )
    return records, manifest


def run_generation(
    config: RunConfig,
    task: TaskSpec,
    topic_source: KnowledgeGraph | CandidateSet | Mapping[str, CandidateSet] | None,
    styles: CandidateSet | None,
    client: Backend,
    *,
    demos: FewShotSet | None = None,
    pack: TemplatePack | None = None,
    price_table: PriceTable | None = None,
    out_path: str | Path | None = None,
    manifest_path: str | Path | None = None,
) -> tuple[list[SyntheticRecord], RunManifest]:
    """Generate ``config.n_total`` record slots with round-robin labels.

    Knowledge-infused mode requires a topic source and a non-empty style
    set; Plain and Demo modes draw neither. On a client hard failure the
    completed records are flushed and the manifest is marked incomplete.
    """
    if task.id != config.task_id:
        raise DataError(f"config names task {config.task_id!r} but got {task.id!r}")
    pack = pack or default_pack()
    topics: TopicProvider | None = None
    if config.mode == PromptMode.KNOWLEDGE_INFUSED:
        if topic_source is None:
            raise DataError("knowledge-infused mode requires a topic source")
        topics = make_topic_provider(topic_source)
        if styles is None or not styles.items:
            raise DataError("knowledge-infused mode requires a non-empty style set")
    if config.mode == PromptMode.DEMO and demos is None:
        raise DataError("demo mode requires a few-shot set")
    if demos is not None:
        demos.validate_against(task)

    started = time.monotonic()
    outcomes: list[_SlotOutcome] = []
    slots = range(config.n_total)
    aborted: Exception | None = None

    def work(slot: int) -> _SlotOutcome:
        return _run_slot(config, task, topics, styles, demos, client, pack, slot)

    if config.max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            futures = [pool.submit(work, slot) for slot in slots]
            for future in futures:
                if aborted is not None:
                    future.cancel()
                    continue
                try:
                    outcomes.append(future.result())
                except TransportError as exc:
                    aborted = exc
    else:
        for slot in slots:
            try:
                outcomes.append(work(slot))
            except TransportError as exc:
                aborted = exc
                break

    records, manifest = _finalize(
        config, outcomes, topics, styles, price_table, started, incomplete=aborted is not None
    )
    if out_path is not None:
        core.write_dataset(records, out_path)
    if manifest_path is not None:
        manifest.save(manifest_path)
    if aborted is not None:
        raise GenerationAborted(
            f"run aborted after {len(outcomes)} slot(s): {aborted}", records, manifest
        )
    return records, manifest


def run_nli_chain(
    config: RunConfig,
    task: TaskSpec,
    topic_source: KnowledgeGraph | CandidateSet | Mapping[str, CandidateSet] | None,
    styles: CandidateSet | None,
    client: Backend,
    **kwargs,
) -> tuple[list[SyntheticRecord], RunManifest]:
    """Sentence-pair generation: two sequential completions per slot, the
    second prompt consuming the realized first sentence."""
    if task.family != TaskFamily.NLI_PAIR:
        raise DataError(f"run_nli_chain requires an NLIPair task, got {task.family.value}")
    return run_generation(config, task, topic_source, styles, client, **kwargs)
