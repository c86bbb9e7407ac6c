#!/usr/bin/env python3
"""Offline walkthrough of the full pipeline on a tiny fixture graph.

Builds a small typed knowledge graph, elicits styles from the mock
backend, generates a knowledge-infused NER dataset, and audits it with
the quality metrics. Everything runs locally; no API key needed.
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from kitgen import cli
from kitgen.core import read_dataset


def write_fixtures(root: Path) -> dict:
    nodes = root / "nodes.tsv"
    edges = root / "edges.tsv"
    node_rows = [f"d{i}\tdisorder {i}\tDisease" for i in range(12)]
    node_rows += [f"c{i}\tcompound {i}\tChemical" for i in range(12)]
    nodes.write_text("id\tname\ttype\n" + "\n".join(node_rows) + "\n")
    edges.write_text(
        "head\trelation\ttail\n" + "\n".join(f"c{i}\tinduces\td{i}" for i in range(12)) + "\n"
    )

    tasks = root / "tasks.json"
    tasks.write_text(
        json.dumps(
            {
                "id": "disease-ner",
                "family": "NER",
                "domain_phrase": "disease",
                "labels": [{"name": "disease", "description": "a disease mention"}],
                "topic_entity_types": ["Disease"],
            }
        )
    )

    few_shot = root / "few_shot.json"
    few_shot.write_text(
        json.dumps(
            {
                "task_id": "disease-ner",
                "shots_per_label": 2,
                "examples": [
                    {"texts": ["The patient presented with disorder 1."], "label": "disease"},
                    {"texts": ["A history of disorder 2 was noted."], "label": "disease"},
                ],
            }
        )
    )
    return {"nodes": nodes, "edges": edges, "tasks": tasks, "few_shot": few_shot}


def fake_embeddings(records, path: Path) -> None:
    # Stand-in for a sentence-encoder export: deterministic per record id.
    rows = []
    for record in records:
        rng = np.random.default_rng(abs(hash(record.record_id)) % 2**32)
        vec = rng.normal(size=16)
        rows.append(record.record_id + "\t" + "\t".join(f"{v:.6f}" for v in vec))
    path.write_text("\n".join(rows) + "\n")


def main() -> int:
    root = Path(tempfile.mkdtemp(prefix="kitgen-demo-"))
    print(f"working directory: {root}\n")
    fx = write_fixtures(root)

    steps = [
        ["kg-load", "--nodes", str(fx["nodes"]), "--edges", str(fx["edges"]),
         "--lexicon-out", str(root / "lexicon.tsv"), "--lexicon-types", "Disease"],
        ["elicit", "--what", "styles", "--task", "disease-ner",
         "--task-specs", str(fx["tasks"]), "--few-shot", str(fx["few_shot"]),
         "--backend", "mock", "--out", str(root / "styles.jsonl")],
        ["generate", "--task", "disease-ner", "--task-specs", str(fx["tasks"]),
         "--n", "60", "--seed", "7", "--backend", "mock",
         "--nodes", str(fx["nodes"]), "--edges", str(fx["edges"]),
         "--styles", str(root / "styles.jsonl"), "--out", str(root)],
    ]
    for argv in steps:
        print(f"$ kitgen {' '.join(argv)}")
        code = cli.main(argv)
        if code != 0:
            return code
        print()

    dataset = root / "disease-ner.jsonl"
    fake_embeddings(read_dataset(dataset), root / "embeddings.tsv")
    argv = ["analyze", "--dataset", str(dataset), "--reference", str(dataset),
            "--embeddings", str(root / "embeddings.tsv"),
            "--lexicon", str(root / "lexicon.tsv"), "--out", str(root / "report")]
    print(f"$ kitgen {' '.join(argv)}")
    code = cli.main(argv)
    print(f"\nartifacts under {root}")
    return code


if __name__ == "__main__":
    sys.exit(main())
