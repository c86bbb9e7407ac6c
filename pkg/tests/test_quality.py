import json
import math
import unicodedata

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kitgen.errors import DataError, TransportError
from kitgen.kg import EntityLexicon
from kitgen.quality import (
    CoverageResult,
    EmbeddingSet,
    HttpEmbeddingProvider,
    avg_pairwise_similarity,
    cmd,
    embed_from_file,
    entity_coverage,
    entity_frequency,
    write_cmd_csv,
    write_frequency_csv,
)

from conftest import make_record


# Independent oracles (direct summation, plain Python floats).


def oracle_bounds(X, Y):
    pooled = [list(row) for row in X] + [list(row) for row in Y]
    d = len(pooled[0])
    lo = [min(row[j] for row in pooled) for j in range(d)]
    hi = [max(row[j] for row in pooled) for j in range(d)]
    hi = [lo[j] + 1e-12 if hi[j] - lo[j] < 1e-12 else hi[j] for j in range(d)]
    return lo, hi


def oracle_cmd(X, Y, order, lo=None, hi=None):
    X = [list(map(float, row)) for row in X]
    Y = [list(map(float, row)) for row in Y]
    if lo is None:
        lo, hi = oracle_bounds(X, Y)
    d = len(X[0])

    def mean(M):
        return [sum(row[j] for row in M) / len(M) for j in range(d)]

    def central(M, mu, k):
        return [sum((row[j] - mu[j]) ** k for row in M) / len(M) for j in range(d)]

    def norm(v):
        return math.sqrt(sum(x * x for x in v))

    mx, my = mean(X), mean(Y)
    terms = [norm([(mx[j] - my[j]) / (hi[j] - lo[j]) for j in range(d)])]
    for k in range(2, order + 1):
        cx, cy = central(X, mx, k), central(Y, my, k)
        terms.append(norm([(cx[j] - cy[j]) / (hi[j] - lo[j]) ** k for j in range(d)]))
    return terms, sum(terms)


def oracle_aps(vectors):
    n = len(vectors)
    total, count = 0.0, 0
    for i in range(n):
        for j in range(i + 1, n):
            vi, vj = vectors[i], vectors[j]
            dot = sum(a * b for a, b in zip(vi, vj))
            ni = math.sqrt(sum(a * a for a in vi))
            nj = math.sqrt(sum(b * b for b in vj))
            total += dot / (ni * nj)
            count += 1
    return total / count


def oracle_tokens(text):
    out = []
    for tok in " ".join(unicodedata.normalize("NFC", text).casefold().split()).split():
        tok = tok.strip("\"'()[]{}.,;:!?“”‘’")
        if tok:
            out.append(tok)
    return out


def oracle_coverage(texts, lexicon):
    counts = {}
    entry_tokens = {
        node_id: oracle_tokens(surface) for surface, node_id in lexicon.entries.items()
    }
    for text in texts:
        tokens = oracle_tokens(text)
        candidates = []
        for node_id, etoks in entry_tokens.items():
            if not etoks:
                continue
            for start in range(len(tokens) - len(etoks) + 1):
                if tokens[start : start + len(etoks)] == etoks:
                    candidates.append((start, len(etoks), node_id))
        candidates.sort(key=lambda c: (c[0], -c[1], c[2]))
        cursor = -1
        for start, length, node_id in candidates:
            if start > cursor:
                counts[node_id] = counts.get(node_id, 0) + 1
                cursor = start + length - 1
    return counts


# CMD


def test_cmd_identity_is_exactly_zero():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 6))
    for order in (1, 2, 5):
        result = cmd(X, X, order=order)
        assert result.total == 0.0
        assert all(t == 0.0 for t in result.terms)


def test_cmd_hand_fixture_equal_means():
    X = [(0.0, 0.0), (1.0, 1.0)]
    Y = [(1.0, 0.0), (0.0, 1.0)]
    result = cmd(np.array(X), np.array(Y), order=2, bounds=([0.0, 0.0], [1.0, 1.0]))
    assert result.terms[0] == 0.0
    _, expected = oracle_cmd(X, Y, 2, [0.0, 0.0], [1.0, 1.0])
    assert abs(result.total - expected) < 1e-9


def test_cmd_matches_oracle_random_sets():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n1, n2 = int(rng.integers(2, 200)), int(rng.integers(2, 200))
        d = int(rng.integers(1, 9))
        X = rng.normal(loc=rng.normal(), size=(n1, d))
        Y = rng.normal(loc=rng.normal(), size=(n2, d))
        result = cmd(X, Y, order=5)
        terms, total = oracle_cmd(X.tolist(), Y.tolist(), 5)
        assert abs(result.total - total) < 1e-9
        for got, want in zip(result.terms, terms):
            assert abs(got - want) < 1e-9


def test_cmd_symmetry_bit_exact():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 5))
    Y = rng.normal(size=(25, 5))
    assert cmd(X, Y, order=5).total == cmd(Y, X, order=5).total
    assert cmd(X, Y, order=5).terms == cmd(Y, X, order=5).terms


def test_cmd_non_negative():
    rng = np.random.default_rng(5)
    for _ in range(10):
        X = rng.normal(size=(12, 4))
        Y = rng.normal(size=(9, 4))
        result = cmd(X, Y)
        assert result.total >= 0.0
        assert all(t >= 0.0 for t in result.terms)


def test_cmd_total_is_sum_of_terms():
    rng = np.random.default_rng(6)
    result = cmd(rng.normal(size=(20, 3)), rng.normal(size=(30, 3)), order=4)
    assert result.total == pytest.approx(sum(result.terms), abs=0)


def test_cmd_errors():
    X = np.zeros((3, 2))
    Y = np.zeros((3, 3))
    with pytest.raises(DataError, match="dimension"):
        cmd(X, Y)
    with pytest.raises(DataError, match="degenerate"):
        cmd(np.ones((3, 2)), np.ones((3, 2)), bounds=([0.0, 1.0], [1.0, 1.0]))
    with pytest.raises(DataError, match="non-empty"):
        cmd(np.zeros((0, 2)), np.zeros((3, 2)))


def test_cmd_auto_bounds_constant_dimension_widened():
    X = np.array([[1.0, 0.0], [1.0, 1.0]])
    Y = np.array([[1.0, 0.5], [1.0, 0.25]])
    result = cmd(X, Y, order=3)
    assert math.isfinite(result.total)


def test_cmd_csv(tmp_path):
    result = cmd(np.eye(3), np.ones((3, 3)) / 2, order=3)
    path = tmp_path / "cmd.csv"
    write_cmd_csv(result, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "moment_order,term"
    assert lines[-1].startswith("total,")
    assert len(lines) == 5


# APS


def test_aps_identical_rows_is_one():
    X = np.tile([1.0, 2.0, 3.0], (5, 1))
    assert avg_pairwise_similarity(X) == pytest.approx(1.0, abs=1e-12)


def test_aps_orthogonal_pair_is_zero():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert avg_pairwise_similarity(X) == pytest.approx(0.0, abs=1e-12)


def test_aps_matches_quadratic_oracle():
    rng = np.random.default_rng(17)
    X = rng.normal(size=(50, 7))
    assert abs(avg_pairwise_similarity(X) - oracle_aps(X.tolist())) < 1e-9


def test_aps_zero_vector_names_record():
    vectors = np.array([[1.0, 0.0], [0.0, 0.0]])
    eset = EmbeddingSet(vectors=vectors, ids=("good", "bad"))
    with pytest.raises(DataError, match="bad"):
        avg_pairwise_similarity(eset)


def test_aps_needs_two_vectors():
    with pytest.raises(DataError):
        avg_pairwise_similarity(np.ones((1, 3)))


def test_aps_sampled_mode_is_seeded():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(100, 5))
    a = avg_pairwise_similarity(X, max_pairs=200, rng=np.random.default_rng(1))
    b = avg_pairwise_similarity(X, max_pairs=200, rng=np.random.default_rng(1))
    assert a == b
    full = avg_pairwise_similarity(X)
    assert abs(a - full) < 0.2


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (6, 4), elements=st.floats(-10, 10)).filter(
        lambda m: np.all(np.linalg.norm(m, axis=1) > 1e-6)
    ),
    st.lists(st.floats(0.1, 50), min_size=6, max_size=6),
)
def test_aps_invariant_under_positive_scaling(matrix, scales):
    scaled = matrix * np.array(scales)[:, None]
    assert avg_pairwise_similarity(scaled) == pytest.approx(
        avg_pairwise_similarity(matrix), abs=1e-8
    )


# entity coverage


def _lexicon(entries):
    return EntityLexicon(entries=dict(entries))


def test_longest_match_consumes_first_heart():
    lex = _lexicon({"heart failure": "hf", "heart": "h"})
    result = entity_coverage(["heart failure and heart rate"], lex)
    assert result.counts == {"hf": 1, "h": 1}


def test_empty_dataset_zero_matches():
    lex = _lexicon({"stroke": "s"})
    result = entity_coverage([], lex)
    assert result.distinct_matched == 0
    assert result.counts == {}


def test_coverage_case_insensitive_and_punctuation():
    lex = _lexicon({"stroke": "s", "heart failure": "hf"})
    result = entity_coverage(
        ["The patient had a STROKE.", "Heart failure, confirmed twice: heart failure!"], lex
    )
    assert result.counts == {"s": 1, "hf": 2}


def test_coverage_matches_quadratic_oracle():
    rng = np.random.default_rng(23)
    vocab = ["stroke", "sepsis", "heart", "failure", "heart failure", "renal", "renal failure",
             "acute", "acute renal failure", "migraine"]
    lex = _lexicon({name: f"id{i}" for i, name in enumerate(vocab)})
    texts = []
    words = ["the", "patient", "with", "acute", "renal", "failure", "heart", "stroke",
             "sepsis", "migraine", "was", "admitted", "today"]
    for _ in range(300):
        k = int(rng.integers(3, 15))
        texts.append(" ".join(words[int(i)] for i in rng.integers(0, len(words), size=k)) + ".")
    result = entity_coverage(texts, lex)
    assert result.counts == oracle_coverage(texts, lex)


def test_coverage_monotone_in_records():
    lex = _lexicon({"stroke": "s", "sepsis": "p"})
    texts = ["a stroke", "nothing here", "sepsis and stroke", "more sepsis"]
    distinct = []
    for i in range(len(texts) + 1):
        distinct.append(entity_coverage(texts[:i], lex).distinct_matched)
    assert distinct == sorted(distinct)


def test_coverage_accepts_records(tiny_kg):
    from kitgen.kg import build_lexicon

    lex = build_lexicon(tiny_kg, ["Disease"])
    records = [make_record(i, text_primary=f"Found disorder {i % 3} today.") for i in range(6)]
    result = entity_coverage(records, lex)
    assert result.distinct_matched == 3


# entity frequency


def test_frequency_trivial():
    rows = entity_frequency(CoverageResult(counts={"a": 3, "b": 1}, lexicon_size=10))
    assert [(r.entity_id, r.frequency) for r in rows] == [("a", 0.75), ("b", 0.25)]
    assert [r.rank for r in rows] == [1, 2]


def test_frequency_single_entity():
    rows = entity_frequency(CoverageResult(counts={"e": 7}, lexicon_size=3))
    assert rows[0].frequency == 1.0


def test_frequency_empty_support_error():
    with pytest.raises(DataError, match="empty support"):
        entity_frequency(CoverageResult(counts={}, lexicon_size=5))


def test_frequency_sums_to_one():
    rng = np.random.default_rng(31)
    counts = {f"e{i}": int(c) for i, c in enumerate(rng.integers(1, 100, size=50))}
    rows = entity_frequency(CoverageResult(counts=counts, lexicon_size=100))
    assert sum(r.frequency for r in rows) == pytest.approx(1.0, abs=1e-9)


def test_frequency_uniform_topics_ratio_bound():
    # Uniform multinomial over 10 entities at n=2000: max/min ratio stays
    # well under 2 with overwhelming probability.
    rng = np.random.default_rng(101)
    draw = rng.multinomial(2000, [0.1] * 10)
    counts = {f"e{i}": int(c) for i, c in enumerate(draw)}
    rows = entity_frequency(CoverageResult(counts=counts, lexicon_size=10))
    freqs = [r.frequency for r in rows]
    assert max(freqs) / min(freqs) < 2.0


def test_frequency_csv(tmp_path):
    rows = entity_frequency(CoverageResult(counts={"a": 3, "b": 1}, lexicon_size=4))
    path = tmp_path / "freq.csv"
    write_frequency_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "rank,entity,frequency"
    assert lines[1] == "1,a,0.75"


# embedding providers


def test_file_provider_tsv(tmp_path):
    records = [make_record(i) for i in range(3)]
    path = tmp_path / "emb.tsv"
    path.write_text(
        "\n".join(f"{r.record_id}\t{i}.0\t{i + 1}.0" for i, r in enumerate(records)) + "\n"
    )
    eset = embed_from_file(records, path)
    assert eset.ids == tuple(r.record_id for r in records)
    assert eset.vectors.shape == (3, 2)


def test_file_provider_jsonl(tmp_path):
    records = [make_record(i) for i in range(2)]
    path = tmp_path / "emb.jsonl"
    path.write_text(
        "\n".join(
            json.dumps({"id": r.record_id, "vector": [0.5, 1.5, 2.5]}) for r in records
        )
        + "\n"
    )
    eset = embed_from_file(records, path)
    assert eset.vectors.shape == (2, 3)


def test_file_provider_missing_id(tmp_path):
    records = [make_record(0), make_record(1)]
    path = tmp_path / "emb.tsv"
    path.write_text(f"{records[0].record_id}\t1.0\n")
    with pytest.raises(DataError, match=records[1].record_id):
        embed_from_file(records, path)


def test_file_provider_dimension_drift(tmp_path):
    records = [make_record(0), make_record(1)]
    path = tmp_path / "emb.tsv"
    path.write_text(
        f"{records[0].record_id}\t1.0\t2.0\n{records[1].record_id}\t1.0\n"
    )
    with pytest.raises(DataError, match="dimension"):
        embed_from_file(records, path)


def _endpoint_provider(responses, tmp_path, cache=False):
    calls = []

    def fake_post(url, body, timeout):
        calls.append(body)
        step = responses[min(len(calls) - 1, len(responses) - 1)]
        if step == "timeout":
            raise TimeoutError("simulated")
        return step

    provider = HttpEmbeddingProvider(
        endpoint="https://emb.invalid/embed",
        cache_dir=(tmp_path / "cache") if cache else None,
        post=fake_post,
        sleeper=lambda _: None,
    )
    return provider, calls


def test_endpoint_provider_retries_like_llmclient(tmp_path):
    records = [make_record(i) for i in range(2)]
    ok = (200, json.dumps({"vectors": [[1.0, 0.0], [0.0, 1.0]]}))
    provider, calls = _endpoint_provider([(500, "x"), (429, "x"), ok], tmp_path)
    eset = provider.embed(records)
    assert eset.vectors.shape == (2, 2)
    assert len(calls) == 3


def test_endpoint_provider_exhaustion(tmp_path):
    records = [make_record(0)]
    provider, calls = _endpoint_provider([(500, "x")], tmp_path)
    with pytest.raises(TransportError):
        provider.embed(records)
    assert len(calls) == 5


def test_endpoint_provider_cache_hits_skip_network(tmp_path):
    records = [make_record(i) for i in range(2)]
    ok = (200, json.dumps({"vectors": [[1.0, 0.0], [0.0, 1.0]]}))
    provider, calls = _endpoint_provider([ok], tmp_path, cache=True)
    provider.embed(records)
    assert len(calls) == 1
    provider2, calls2 = _endpoint_provider([ok], tmp_path, cache=True)
    provider2.cache_dir = provider.cache_dir
    eset = provider2.embed(records)
    assert calls2 == []
    assert eset.vectors.shape == (2, 2)


def test_embedding_set_rejects_non_finite():
    with pytest.raises(DataError, match="non-finite"):
        EmbeddingSet(vectors=np.array([[1.0, np.nan]]), ids=("a",))
