import collections

import numpy as np
import pytest

from kitgen.core import SeededRng, TopicKind
from kitgen.errors import ConfigError, DataError
from kitgen.kg import (
    ColumnMap,
    EntityLexicon,
    build_lexicon,
    load_kg,
    normalize_surface,
    sample_entity_topics,
    sample_pair_topics,
)


def write_kg_files(tmp_path, node_rows, edge_rows, delimiter="\t"):
    nodes = tmp_path / "nodes.tsv"
    edges = tmp_path / "edges.tsv"
    nodes.write_text(
        delimiter.join(("id", "name", "type"))
        + "\n"
        + "\n".join(delimiter.join(row) for row in node_rows)
        + "\n"
    )
    header = delimiter.join(("head", "relation", "tail"))
    body = "\n".join(delimiter.join(row) for row in edge_rows)
    edges.write_text(header + ("\n" + body if body else "") + "\n")
    return nodes, edges


def test_load_small_fixture(tmp_path):
    nodes, edges = write_kg_files(
        tmp_path,
        [("n1", "stroke", "Disease"), ("n2", "aspirin", "Drug"), ("n3", "sepsis", "Disease")],
        [("n2", "treats", "n1"), ("n2", "treats", "n3")],
    )
    kg = load_kg(nodes, edges)
    assert len(kg.nodes) == 3
    assert len(kg.edges) == 2
    assert kg.dropped_edges == 0
    assert kg.entity_types == ["Disease", "Drug"]


def test_dangling_edge_dropped_and_counted(tmp_path):
    nodes, edges = write_kg_files(
        tmp_path,
        [("n1", "stroke", "Disease"), ("n2", "aspirin", "Drug")],
        [("n2", "treats", "n1"), ("n2", "treats", "ghost")],
    )
    kg = load_kg(nodes, edges)
    assert len(kg.edges) == 1
    assert kg.dropped_edges == 1


def test_duplicate_node_ids_rejected(tmp_path):
    nodes, edges = write_kg_files(
        tmp_path,
        [("n1", "stroke", "Disease"), ("n1", "sepsis", "Disease")],
        [],
    )
    kg = load_kg(nodes, edges)
    assert len(kg.nodes) == 1
    assert kg.duplicate_nodes == 1
    assert kg.nodes["n1"].name == "stroke"


def test_missing_column_is_fatal(tmp_path):
    nodes, edges = write_kg_files(
        tmp_path, [("n1", "stroke", "Disease")], [], delimiter="\t"
    )
    with pytest.raises(ConfigError, match="node_key"):
        load_kg(nodes, edges, ColumnMap(node_id="node_key"))


def test_empty_node_file_is_fatal(tmp_path):
    nodes = tmp_path / "nodes.tsv"
    nodes.write_text("")
    edges = tmp_path / "edges.tsv"
    edges.write_text("head\trelation\ttail\n")
    with pytest.raises(DataError, match="empty"):
        load_kg(nodes, edges)


def test_comma_delimited_files(tmp_path):
    nodes, edges = write_kg_files(
        tmp_path,
        [("n1", "stroke", "Disease"), ("n2", "aspirin", "Drug")],
        [("n2", "treats", "n1")],
        delimiter=",",
    )
    kg = load_kg(nodes, edges)
    assert len(kg.nodes) == 2
    assert len(kg.edges) == 1


def test_type_index_matches_group_by_oracle(tmp_path):
    rng = np.random.default_rng(42)
    types = ["Disease", "Drug", "Gene", "Symptom", "Procedure"]
    rows = []
    for i in range(10_000):
        rows.append((f"n{i}", f"name {i}", types[int(rng.integers(0, len(types)))]))
    nodes, edges = write_kg_files(tmp_path, rows, [])
    kg = load_kg(nodes, edges)
    oracle = collections.Counter(row[2] for row in rows)
    assert {t: len(ids) for t, ids in kg.type_index.items()} == dict(oracle)


def test_sampling_reproducible_and_row_order_independent(tmp_path):
    rows = [("a", "alpha", "T"), ("b", "beta", "T"), ("c", "gamma", "T")]
    d1 = tmp_path / "fwd"
    d2 = tmp_path / "rev"
    d1.mkdir()
    d2.mkdir()
    n1, e1 = write_kg_files(d1, rows, [])
    n2, e2 = write_kg_files(d2, rows[::-1], [])
    kg1 = load_kg(n1, e1)
    kg2 = load_kg(n2, e2)
    draws1 = [t.primary_name for t in sample_entity_topics(kg1, "T", 50, SeededRng(5).stream(0))]
    draws2 = [t.primary_name for t in sample_entity_topics(kg2, "T", 50, SeededRng(5).stream(0))]
    assert draws1 == draws2


def test_singleton_type_sampling(tiny_kg):
    single = {k: v for k, v in tiny_kg.nodes.items() if k == "d0"}
    from kitgen.kg import KnowledgeGraph

    kg = KnowledgeGraph(nodes=single, edges=[])
    topics = sample_entity_topics(kg, "Disease", 3, SeededRng(1).stream(0))
    assert [t.primary_name for t in topics] == ["disorder 0"] * 3
    assert all(t.kind == TopicKind.ENTITY for t in topics)


def test_zero_draws_is_error(tiny_kg):
    with pytest.raises(DataError):
        sample_entity_topics(tiny_kg, "Disease", 0, SeededRng(1).stream(0))


def test_unknown_type_error_lists_available(tiny_kg):
    with pytest.raises(DataError, match="Chemical"):
        sample_entity_topics(tiny_kg, "Protein", 1, SeededRng(1).stream(0))


def test_sampled_topics_exist_verbatim(tiny_kg):
    names = {n.name for n in tiny_kg.nodes.values()}
    for topic in sample_entity_topics(tiny_kg, "Disease", 200, SeededRng(2).stream(0)):
        assert topic.primary_name in names


def test_entity_sampling_uniform_within_5_sigma(tmp_path):
    # 10k draws over the union of 4 equally sized types via type-then-node.
    rows = []
    types = ["A", "B", "C", "D"]
    for t in types:
        for i in range(25):
            rows.append((f"{t}{i}", f"{t} node {i}", t))
    nodes, edges = write_kg_files(tmp_path, rows, [])
    kg = load_kg(nodes, edges)
    rng = SeededRng(2024).stream(0)
    counts = collections.Counter()
    for _ in range(10_000):
        etype = types[int(rng.integers(0, 4))]
        counts[sample_entity_topics(kg, etype, 1, rng)[0].primary_name] += 1
    n, p = 10_000, 1 / 100
    sigma = (n * p * (1 - p)) ** 0.5
    for name in (f"{t} node {i}" for t in types for i in range(25)):
        assert abs(counts[name] - n * p) < 5 * sigma


def test_pair_sampling_single_edge(tiny_kg):
    single_edge_kg = tiny_kg
    topics = sample_pair_topics(
        single_edge_kg, "Chemical", "induces", "Disease", 2, SeededRng(3).stream(0)
    )
    assert len(topics) == 2
    assert all(t.kind == TopicKind.ENTITY_PAIR for t in topics)
    assert all(t.relation == "induces" for t in topics)


def test_pair_sampling_wildcard_split(tmp_path):
    nodes, edges = write_kg_files(
        tmp_path,
        [("c1", "chem one", "Chemical"), ("d1", "dis one", "Disease")],
        [("c1", "induces", "d1"), ("c1", "treats", "d1")],
    )
    kg = load_kg(nodes, edges)
    topics = sample_pair_topics(kg, "Chemical", "*", "Disease", 4000, SeededRng(4).stream(0))
    counts = collections.Counter(t.relation for t in topics)
    assert set(counts) == {"induces", "treats"}
    # ~50/50 split over 2 equally likely edges
    assert abs(counts["induces"] - 2000) < 5 * (4000 * 0.25) ** 0.5


def test_pair_sampling_no_match_reports_nearest(tiny_kg):
    with pytest.raises(DataError, match="nearest existing patterns"):
        sample_pair_topics(tiny_kg, "Chemical", "cures", "Gene", 1, SeededRng(1).stream(0))


def test_normalize_surface():
    assert normalize_surface("  Heart \t Failure ") == "heart failure"
    assert normalize_surface("STROKE") == "stroke"
    assert normalize_surface("Café") == normalize_surface("Café")


def test_lexicon_case_fold_collision(tmp_path):
    nodes, edges = write_kg_files(
        tmp_path,
        [("n1", "Stroke", "Disease"), ("n2", "stroke", "Disease")],
        [],
    )
    kg = load_kg(nodes, edges)
    lex = build_lexicon(kg, ["Disease"])
    assert len(lex) == 1
    assert len(lex.collisions) == 1
    assert lex.lookup("STROKE") == "n1"


def test_lexicon_whitespace_collapse(tmp_path):
    nodes, edges = write_kg_files(
        tmp_path, [("n1", "  heart  failure ", "Disease")], []
    )
    kg = load_kg(nodes, edges)
    lex = build_lexicon(kg, ["Disease"])
    assert "heart failure" in lex.entries


def test_lexicon_size_matches_set_oracle(tmp_path):
    rng = np.random.default_rng(7)
    words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"]
    rows = []
    names = []
    for i in range(1000):
        name = " ".join(
            words[int(k)] for k in rng.integers(0, len(words), size=int(rng.integers(1, 4)))
        )
        if int(rng.integers(0, 2)):
            name = name.upper()
        rows.append((f"n{i}", name, "Disease"))
        names.append(name)
    nodes, edges = write_kg_files(tmp_path, rows, [])
    kg = load_kg(nodes, edges)
    lex = build_lexicon(kg, ["Disease"])
    assert len(lex) == len({normalize_surface(n) for n in names})


def test_lexicon_lookup_own_names(tiny_kg):
    lex = build_lexicon(tiny_kg, ["Disease", "Chemical"])
    for node in tiny_kg.nodes.values():
        assert lex.lookup(node.name) is not None


def test_lexicon_tsv_round_trip(tiny_kg, tmp_path):
    lex = build_lexicon(tiny_kg, ["Disease"])
    path = tmp_path / "lex.tsv"
    lex.write_tsv(path)
    loaded = EntityLexicon.read_tsv(path)
    assert loaded.entries == lex.entries
