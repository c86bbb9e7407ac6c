"""Dataset quality metrics: central moment discrepancy between embedding
sets, average pairwise cosine similarity, entity coverage against a
lexicon, and normalized entity-frequency distributions.

Embeddings are consumed from files or an HTTP endpoint, never computed in
process, so every metric is exactly reproducible from cached vectors.
Entity matching reuses the lexicon's surface normalization on both sides.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import SyntheticRecord, sha256_hex
from .errors import ConfigError, DataError
from .kg import EntityLexicon, normalize_surface
from .llmclient import retry_with_backoff

logger = logging.getLogger(__name__)

DEFAULT_CMD_ORDER = 5
_BOUNDS_EPS = 1e-12


@dataclass(frozen=True)
class EmbeddingSet:
    """An n x d matrix of real vectors aligned with record ids."""

    vectors: np.ndarray
    ids: tuple[str, ...]
    model_tag: str = ""

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2 or self.vectors.shape[1] < 1:
            raise DataError("vectors must form an n x d matrix with d >= 1")
        if len(self.ids) != self.vectors.shape[0]:
            raise DataError("one id per vector required")
        if not np.isfinite(self.vectors).all():
            raise DataError("vectors contain non-finite values")

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class CmdResult:
    order: int
    terms: tuple[float, ...]
    total: float


def _resolve_bounds(
    X: np.ndarray, Y: np.ndarray, bounds: tuple[Sequence[float], Sequence[float]] | str
) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(bounds, str):
        if bounds != "auto":
            raise ConfigError(f"bounds must be 'auto' or an (a, b) pair, got {bounds!r}")
        pooled = np.vstack([X, Y])
        lo = pooled.min(axis=0)
        hi = pooled.max(axis=0)
        narrow = (hi - lo) < _BOUNDS_EPS
        hi = np.where(narrow, lo + _BOUNDS_EPS, hi)
        return lo, hi
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    if lo.ndim == 0:
        lo = np.full(X.shape[1], float(lo))
    if hi.ndim == 0:
        hi = np.full(X.shape[1], float(hi))
    if lo.shape != (X.shape[1],) or hi.shape != (X.shape[1],):
        raise DataError("bounds must be scalars or one (a, b) per dimension")
    if np.any(hi <= lo):
        raise DataError("degenerate bounds: need a < b on every dimension")
    return lo, hi


def cmd(
    X: EmbeddingSet | np.ndarray,
    Y: EmbeddingSet | np.ndarray,
    order: int = DEFAULT_CMD_ORDER,
    bounds: tuple[Sequence[float], Sequence[float]] | str = "auto",
) -> CmdResult:
    """Central moment discrepancy between two embedding sets.

    Term 1 is the interval-normalized mean difference; term k (2..order) is
    the normalized difference of per-dimension k-th central moments. With
    per-dimension bounds, normalization is applied per dimension before
    taking the Euclidean norm. The total is the sum of all terms.
    """
    vx = X.vectors if isinstance(X, EmbeddingSet) else np.asarray(X, dtype=float)
    vy = Y.vectors if isinstance(Y, EmbeddingSet) else np.asarray(Y, dtype=float)
    if vx.size == 0 or vy.size == 0:
        raise DataError("embedding sets must be non-empty")
    if vx.shape[1] != vy.shape[1]:
        raise DataError(f"dimension mismatch: {vx.shape[1]} vs {vy.shape[1]}")
    if order < 1:
        raise DataError("order must be >= 1")
    lo, hi = _resolve_bounds(vx, vy, bounds)
    width = hi - lo

    mean_x = vx.mean(axis=0)
    mean_y = vy.mean(axis=0)
    terms = [float(np.linalg.norm((mean_x - mean_y) / width))]
    cx = vx - mean_x
    cy = vy - mean_y
    for k in range(2, order + 1):
        mom_x = (cx**k).mean(axis=0)
        mom_y = (cy**k).mean(axis=0)
        terms.append(float(np.linalg.norm((mom_x - mom_y) / width**k)))
    return CmdResult(order=order, terms=tuple(terms), total=float(sum(terms)))


def avg_pairwise_similarity(
    X: EmbeddingSet | np.ndarray,
    *,
    max_pairs: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Mean cosine similarity over all unordered distinct pairs.

    ``max_pairs`` switches to seeded pair sampling for very large sets.
    """
    vectors = X.vectors if isinstance(X, EmbeddingSet) else np.asarray(X, dtype=float)
    ids = X.ids if isinstance(X, EmbeddingSet) else tuple(str(i) for i in range(len(vectors)))
    n = vectors.shape[0]
    if n < 2:
        raise DataError("need at least 2 vectors")
    norms = np.linalg.norm(vectors, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise DataError(f"zero vector for record id(s): {[ids[i] for i in zero[:5]]}")
    unit = vectors / norms[:, None]

    if max_pairs is not None and max_pairs < n * (n - 1) // 2:
        if rng is None:
            raise DataError("sampled mode requires an explicit rng")
        total = 0.0
        for _ in range(max_pairs):
            i = int(rng.integers(0, n))
            j = int(rng.integers(0, n - 1))
            if j >= i:
                j += 1
            total += float(unit[i] @ unit[j])
        return total / max_pairs

    gram = unit @ unit.T
    iu = np.triu_indices(n, k=1)
    return float(gram[iu].mean())


def _strip_edge_punct(token: str) -> str:
    return token.strip("\"'()[]{}.,;:!?“”‘’")


def _match_tokens(text: str) -> list[str]:
    tokens = [_strip_edge_punct(t) for t in normalize_surface(text).split()]
    return [t for t in tokens if t]


@dataclass
class CoverageResult:
    """Distinct matched entity ids, per-entity counts, and lexicon size."""

    counts: dict[str, int]
    lexicon_size: int

    @property
    def distinct_matched(self) -> int:
        return len(self.counts)

    @property
    def total_matches(self) -> int:
        return sum(self.counts.values())

    @property
    def fraction_of_lexicon(self) -> float:
        return self.distinct_matched / self.lexicon_size if self.lexicon_size else 0.0


def _prepare_lexicon(lexicon: EntityLexicon) -> dict[str, list[tuple[tuple[str, ...], str]]]:
    by_first: dict[str, list[tuple[tuple[str, ...], str]]] = {}
    for surface, node_id in lexicon.entries.items():
        tokens = tuple(_match_tokens(surface))
        if not tokens:
            continue
        by_first.setdefault(tokens[0], []).append((tokens, node_id))
    for bucket in by_first.values():
        bucket.sort(key=lambda entry: (-len(entry[0]), entry[0]))
    return by_first


def _scan_text(
    tokens: list[str],
    by_first: Mapping[str, list[tuple[tuple[str, ...], str]]],
    counts: dict[str, int],
) -> None:
    i = 0
    n = len(tokens)
    while i < n:
        matched = False
        for entry_tokens, node_id in by_first.get(tokens[i], ()):
            span = len(entry_tokens)
            if i + span <= n and tuple(tokens[i : i + span]) == entry_tokens:
                counts[node_id] = counts.get(node_id, 0) + 1
                i += span
                matched = True
                break
        if not matched:
            i += 1


def record_texts(record: SyntheticRecord) -> list[str]:
    texts = [record.text_primary]
    if record.text_secondary:
        texts.append(record.text_secondary)
    return texts


def entity_coverage(
    records: Iterable[SyntheticRecord] | Iterable[str], lexicon: EntityLexicon
) -> CoverageResult:
    """Token-boundary, case-insensitive, longest-match-first non-overlapping
    scan of every record text against the lexicon."""
    if not lexicon.entries:
        raise DataError("lexicon is empty")
    by_first = _prepare_lexicon(lexicon)
    counts: dict[str, int] = {}
    for item in records:
        texts = record_texts(item) if isinstance(item, SyntheticRecord) else [item]
        for text in texts:
            _scan_text(_match_tokens(text), by_first, counts)
    return CoverageResult(counts=counts, lexicon_size=len(lexicon.entries))


@dataclass(frozen=True)
class FrequencyRow:
    rank: int
    entity_id: str
    frequency: float


def entity_frequency(coverage: CoverageResult) -> list[FrequencyRow]:
    """Counts normalized to a distribution, sorted by descending frequency."""
    total = coverage.total_matches
    if total == 0:
        raise DataError("empty support: no entities matched")
    ordered = sorted(coverage.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [
        FrequencyRow(rank=i + 1, entity_id=entity_id, frequency=count / total)
        for i, (entity_id, count) in enumerate(ordered)
    ]


def write_frequency_csv(rows: Sequence[FrequencyRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "entity", "frequency"])
        for row in rows:
            writer.writerow([row.rank, row.entity_id, f"{row.frequency:.10g}"])


def write_cmd_csv(result: CmdResult, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["moment_order", "term"])
        for k, term in enumerate(result.terms, start=1):
            writer.writerow([k, f"{term:.10g}"])
        writer.writerow(["total", f"{result.total:.10g}"])


@dataclass
class QualityReport:
    cmd: CmdResult | None
    aps: float | None
    coverage: CoverageResult | None
    frequency: list[FrequencyRow]
    dataset_size: int
    reference_size: int | None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out: dict = {
            "dataset_size": self.dataset_size,
            "reference_size": self.reference_size,
            "config": self.config,
        }
        if self.cmd is not None:
            out["cmd"] = {
                "order": self.cmd.order,
                "terms": list(self.cmd.terms),
                "total": self.cmd.total,
            }
        if self.aps is not None:
            out["aps"] = self.aps
        if self.coverage is not None:
            out["entity_coverage"] = {
                "distinct_matched": self.coverage.distinct_matched,
                "lexicon_size": self.coverage.lexicon_size,
                "fraction_of_lexicon": self.coverage.fraction_of_lexicon,
                "total_matches": self.coverage.total_matches,
            }
        if self.frequency:
            out["frequency"] = [
                {"rank": r.rank, "entity": r.entity_id, "frequency": r.frequency}
                for r in self.frequency
            ]
        return out

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")


def _vectors_from_tsv(path: Path) -> dict[str, list[float]]:
    table: dict[str, list[float]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise DataError(f"{path}: line {lineno}: need id\\tv1...\\tvd")
            table[parts[0]] = [float(v) for v in parts[1:]]
    return table


def _vectors_from_jsonl(path: Path) -> dict[str, list[float]]:
    table: dict[str, list[float]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                table[row["id"]] = [float(v) for v in row["vector"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return table


def load_embedding_file(path: str | Path) -> dict[str, list[float]]:
    """Read an id -> vector table from TSV or JSONL (by extension)."""
    path = Path(path)
    if path.suffix.lower() in (".jsonl", ".json"):
        return _vectors_from_jsonl(path)
    return _vectors_from_tsv(path)


def _align(
    ids: Sequence[str], table: Mapping[str, list[float]], model_tag: str
) -> EmbeddingSet:
    missing = [record_id for record_id in ids if record_id not in table]
    if missing:
        raise DataError(f"missing embedding vectors for id(s): {missing[:10]}")
    dims = {len(table[record_id]) for record_id in ids}
    if len(dims) != 1:
        raise DataError(f"inconsistent embedding dimensions: {sorted(dims)}")
    matrix = np.array([table[record_id] for record_id in ids], dtype=float)
    return EmbeddingSet(vectors=matrix, ids=tuple(ids), model_tag=model_tag)


def embed_from_file(
    records: Sequence[SyntheticRecord], path: str | Path, model_tag: str = "file"
) -> EmbeddingSet:
    """File provider: one vector per record, order-aligned with ids."""
    table = load_embedding_file(path)
    return _align([r.record_id for r in records], table, model_tag)


class HttpEmbeddingProvider:
    """POST {"texts": [...]} -> {"vectors": [[...]]} with the standard retry
    policy; fetched vectors are cached on disk keyed by (model tag,
    record id, text hash)."""

    def __init__(
        self,
        endpoint: str,
        model_tag: str = "endpoint",
        cache_dir: str | Path | None = None,
        batch_size: int = 32,
        timeout_s: float = 60.0,
        post=None,
        sleeper=None,
    ):
        self.endpoint = endpoint
        self.model_tag = model_tag
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.batch_size = batch_size
        self.timeout_s = timeout_s
        self._post = post or self._requests_post
        self._sleeper = sleeper

    def _requests_post(self, url: str, body: dict, timeout: float):
        import requests

        try:
            resp = requests.post(url, json=body, timeout=timeout)
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TimeoutError(str(exc)) from exc
        return resp.status_code, resp.text

    def _cache_path(self, record_id: str, text: str) -> Path | None:
        if self.cache_dir is None:
            return None
        key = sha256_hex(text)[:16]
        return self.cache_dir / self.model_tag / f"{record_id}_{key}.json"

    def embed(self, records: Sequence[SyntheticRecord]) -> EmbeddingSet:
        table: dict[str, list[float]] = {}
        pending: list[SyntheticRecord] = []
        for record in records:
            cache = self._cache_path(record.record_id, record.text_primary)
            if cache is not None and cache.exists():
                table[record.record_id] = json.loads(cache.read_text(encoding="utf-8"))
            else:
                pending.append(record)
        for start in range(0, len(pending), self.batch_size):
            batch = pending[start : start + self.batch_size]
            texts = [r.text_primary for r in batch]
            kwargs = {} if self._sleeper is None else {"sleeper": self._sleeper}
            _, body, _ = retry_with_backoff(
                lambda: self._post(self.endpoint, {"texts": texts}, self.timeout_s),
                what="embedding request",
                **kwargs,
            )
            try:
                vectors = json.loads(body)["vectors"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"malformed embedding response: {exc}") from exc
            if len(vectors) != len(batch):
                raise DataError(
                    f"embedding endpoint returned {len(vectors)} vectors for {len(batch)} texts"
                )
            for record, vector in zip(batch, vectors):
                table[record.record_id] = [float(v) for v in vector]
                cache = self._cache_path(record.record_id, record.text_primary)
                if cache is not None:
                    cache.parent.mkdir(parents=True, exist_ok=True)
                    cache.write_text(json.dumps(table[record.record_id]), encoding="utf-8")
        return _align([r.record_id for r in records], table, self.model_tag)
