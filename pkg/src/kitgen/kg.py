"""Typed knowledge-graph ingestion, topic sampling, and the entity lexicon.

Loads node/edge tables from delimited files, indexes them by type and by
(head_type, relation, tail_type) pattern, and samples single-entity or
entity-pair topics for prompt infusion. The same surface-form
normalization used to build the lexicon is reused by the quality metrics.
"""

from __future__ import annotations

import csv
import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import Topic, TopicKind, TopicSource
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)


def normalize_surface(text: str) -> str:
    """Normalization pipeline: NFC, case fold, collapse whitespace, trim."""
    return " ".join(unicodedata.normalize("NFC", text).casefold().split())


@dataclass(frozen=True)
class Node:
    id: str
    name: str
    type: str


@dataclass(frozen=True)
class Edge:
    head_id: str
    relation: str
    tail_id: str


@dataclass(frozen=True)
class ColumnMap:
    """Names of the id/name/type and head/relation/tail columns."""

    node_id: str = "id"
    node_name: str = "name"
    node_type: str = "type"
    head: str = "head"
    relation: str = "relation"
    tail: str = "tail"

    @classmethod
    def from_dict(cls, data: Mapping[str, str]) -> "ColumnMap":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class KnowledgeGraph:
    """Immutable-after-load graph with type and edge-pattern indices."""

    nodes: dict[str, Node]
    edges: list[Edge]
    dropped_edges: int = 0
    duplicate_nodes: int = 0
    type_index: dict[str, list[str]] = field(default_factory=dict)
    pattern_index: dict[tuple[str, str, str], list[Edge]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for edge in self.edges:
            if edge.head_id not in self.nodes or edge.tail_id not in self.nodes:
                raise DataError(f"edge {edge} references an unknown node")
        self._build_indices()

    def _build_indices(self) -> None:
        by_type: dict[str, list[str]] = {}
        for node in self.nodes.values():
            by_type.setdefault(node.type, []).append(node.id)
        # Sort so sampling is independent of input row order.
        self.type_index = {t: sorted(ids) for t, ids in by_type.items()}
        patterns: dict[tuple[str, str, str], list[Edge]] = {}
        for edge in sorted(self.edges, key=lambda e: (e.head_id, e.relation, e.tail_id)):
            key = (self.nodes[edge.head_id].type, edge.relation, self.nodes[edge.tail_id].type)
            patterns.setdefault(key, []).append(edge)
        self.pattern_index = patterns

    @property
    def entity_types(self) -> list[str]:
        return sorted(self.type_index)

    def fingerprint(self) -> str:
        """Cheap content hash for manifest provenance."""
        import hashlib

        digest = hashlib.blake2b(digest_size=16)
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            digest.update(f"{node.id}\t{node.name}\t{node.type}\n".encode("utf-8"))
        for edge in sorted(self.edges, key=lambda e: (e.head_id, e.relation, e.tail_id)):
            digest.update(f"{edge.head_id}\t{edge.relation}\t{edge.tail_id}\n".encode("utf-8"))
        return digest.hexdigest()


def _read_delimited(path: Path) -> list[dict[str, str]]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        sample = fh.readline()
        if not sample:
            return []
        delimiter = "\t" if "\t" in sample else ","
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=delimiter)
        return [dict(row) for row in reader]


def _require_columns(rows: list[dict[str, str]], wanted: Iterable[str], path: Path) -> None:
    if not rows:
        return
    present = rows[0].keys()
    for col in wanted:
        if col not in present:
            raise ConfigError(f"{path}: mapped column {col!r} not found (have {sorted(present)})")


def load_kg(
    node_file: str | Path,
    edge_file: str | Path,
    column_map: ColumnMap | Mapping[str, str] | None = None,
) -> KnowledgeGraph:
    """Load a typed graph from delimited node and edge files.

    Duplicate node ids are dropped (first occurrence wins) and counted;
    edges referencing unknown nodes are dropped and counted. An empty node
    file is fatal.
    """
    cmap = column_map if isinstance(column_map, ColumnMap) else ColumnMap.from_dict(column_map or {})
    node_path, edge_path = Path(node_file), Path(edge_file)

    node_rows = _read_delimited(node_path)
    if not node_rows:
        raise DataError(f"{node_path}: node file is empty")
    _require_columns(node_rows, (cmap.node_id, cmap.node_name, cmap.node_type), node_path)

    nodes: dict[str, Node] = {}
    duplicate_nodes = 0
    for row in node_rows:
        node = Node(
            id=row[cmap.node_id].strip(),
            name=row[cmap.node_name].strip(),
            type=row[cmap.node_type].strip(),
        )
        if not normalize_surface(node.name):
            raise DataError(f"{node_path}: node {node.id!r} has an empty name")
        if node.id in nodes:
            duplicate_nodes += 1
            continue
        nodes[node.id] = node

    edge_rows = _read_delimited(edge_path)
    _require_columns(edge_rows, (cmap.head, cmap.relation, cmap.tail), edge_path)
    edges: list[Edge] = []
    dropped = 0
    for row in edge_rows:
        edge = Edge(
            head_id=row[cmap.head].strip(),
            relation=row[cmap.relation].strip(),
            tail_id=row[cmap.tail].strip(),
        )
        if edge.head_id not in nodes or edge.tail_id not in nodes:
            dropped += 1
            continue
        edges.append(edge)
    if dropped:
        logger.info("dropped %d edge(s) with dangling endpoints", dropped)

    return KnowledgeGraph(
        nodes=nodes, edges=edges, dropped_edges=dropped, duplicate_nodes=duplicate_nodes
    )


def sample_entity_topics(
    kg: KnowledgeGraph, entity_type: str, n: int, rng: np.random.Generator
) -> list[Topic]:
    """Draw n topics uniformly with replacement from nodes of a type."""
    if n < 1:
        raise DataError("n must be >= 1")
    ids = kg.type_index.get(entity_type)
    if not ids:
        raise DataError(
            f"unknown entity type {entity_type!r}; available types: {kg.entity_types}"
        )
    picks = rng.integers(0, len(ids), size=n)
    return [
        Topic(
            kind=TopicKind.ENTITY,
            primary_name=kg.nodes[ids[i]].name,
            entity_type=entity_type,
            source=TopicSource.KG,
        )
        for i in picks
    ]


def _nearest_patterns(
    kg: KnowledgeGraph, head_type: str, relation: str, tail_type: str
) -> list[tuple[str, str, str]]:
    wanted = (head_type, relation, tail_type)
    scored = []
    for pattern in kg.pattern_index:
        overlap = sum(1 for a, b in zip(pattern, wanted) if a == b or b == "*")
        if overlap:
            scored.append((-overlap, pattern))
    return [p for _, p in sorted(scored)[:5]]


def sample_pair_topics(
    kg: KnowledgeGraph,
    head_type: str,
    relation: str,
    tail_type: str,
    n: int,
    rng: np.random.Generator,
) -> list[Topic]:
    """Draw n entity-pair topics uniformly over edges matching the pattern.

    ``relation`` may be "*" to match any relation between the two types.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    matching: list[Edge] = []
    for (ht, rel, tt), bucket in sorted(kg.pattern_index.items()):
        if ht == head_type and tt == tail_type and (relation == "*" or rel == relation):
            matching.extend(bucket)
    if not matching:
        near = _nearest_patterns(kg, head_type, relation, tail_type)
        raise DataError(
            f"no edges match pattern ({head_type!r}, {relation!r}, {tail_type!r});"
            f" nearest existing patterns: {near}"
        )
    picks = rng.integers(0, len(matching), size=n)
    out = []
    for i in picks:
        edge = matching[i]
        out.append(
            Topic(
                kind=TopicKind.ENTITY_PAIR,
                primary_name=kg.nodes[edge.head_id].name,
                secondary_name=kg.nodes[edge.tail_id].name,
                relation=edge.relation,
                entity_type=f"{head_type}/{tail_type}",
                source=TopicSource.KG,
            )
        )
    return out


@dataclass
class EntityLexicon:
    """Normalized surface form -> canonical node id, plus collision audit."""

    entries: dict[str, str]
    collisions: list[tuple[str, str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, surface: str) -> str | None:
        return self.entries.get(normalize_surface(surface))

    def write_tsv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for surface in sorted(self.entries):
                fh.write(f"{surface}\t{self.entries[surface]}\n")

    @classmethod
    def read_tsv(cls, path: str | Path) -> "EntityLexicon":
        entries: dict[str, str] = {}
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                surface, node_id = line.split("\t", 1)
                entries[surface] = node_id
        if not entries:
            raise DataError(f"{path}: empty lexicon")
        return cls(entries=entries)


def build_lexicon(kg: KnowledgeGraph, entity_types: Iterable[str]) -> EntityLexicon:
    """Build the reference vocabulary for coverage/frequency metrics.

    Normalization collisions keep the first id (node-id order) and are
    logged and recorded for audit.
    """
    entity_types = list(entity_types)
    for etype in entity_types:
        if etype not in kg.type_index:
            raise DataError(
                f"unknown entity type {etype!r}; available types: {kg.entity_types}"
            )
    entries: dict[str, str] = {}
    collisions: list[tuple[str, str, str]] = []
    for etype in entity_types:
        for node_id in kg.type_index[etype]:
            node = kg.nodes[node_id]
            key = normalize_surface(node.name)
            if key in entries:
                if entries[key] != node_id:
                    collisions.append((key, entries[key], node_id))
                    logger.info(
                        "lexicon collision on %r: keeping %s, dropping %s",
                        key, entries[key], node_id,
                    )
                continue
            entries[key] = node_id
    if not entries:
        raise DataError("lexicon is empty for the requested types")
    return EntityLexicon(entries=entries, collisions=collisions)
