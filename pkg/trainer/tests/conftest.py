import json
import random

import pytest


FILLERS = ["the", "visit", "was", "recorded", "note", "review", "clinic",
           "follow", "up", "patient"]


def toy_record(i, label, text, **overrides):
    row = {
        "record_id": f"r{i:05d}",
        "task_id": "toy",
        "label": label,
        "text_primary": text,
        "style": "",
        "prompt_mode": "Plain",
        "prompt_sha256": "0" * 64,
        "model_id": "m",
        "usage": {"prompt_tokens": 1, "completion_tokens": 1},
        "valid": True,
    }
    row.update(overrides)
    return row


def keyword_sentence(rng, keyword, length=8):
    words = [rng.choice(FILLERS) for _ in range(length)]
    words.insert(rng.randrange(len(words)), keyword)
    return " ".join(words)


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")


@pytest.fixture
def toy_corpus(tmp_path):
    """Separable 2-class keyword corpus in the core JSONL schema:
    a 20-example few-shot file (10 per label; half trains, half validates)
    plus a 2000-record synthetic set."""
    rng = random.Random(0)
    classes = (("helpful", "excellent"), ("harmful", "terrible"))
    few = []
    i = 0
    for label, keyword in classes:
        for _ in range(10):
            few.append(toy_record(i, label, keyword_sentence(rng, keyword)))
            i += 1
    few_path = tmp_path / "few.jsonl"
    write_jsonl(few_path, few)

    syn = []
    for k in range(2000):
        label, keyword = classes[k % 2]
        syn.append(toy_record(10_000 + k, label, keyword_sentence(rng, keyword)))
    syn_path = tmp_path / "syn.jsonl"
    write_jsonl(syn_path, syn)
    return few_path, syn_path


@pytest.fixture
def ner_corpus(tmp_path):
    rng = random.Random(1)
    diseases = ["stroke", "sepsis", "gout", "asthma"]
    few = []
    i = 0
    for _ in range(4):
        d = diseases[i % len(diseases)]
        few.append(
            toy_record(
                i, "disease", f"the patient presented with {d} during review",
                entities=[d],
            )
        )
        i += 1
    few_path = tmp_path / "ner_few.jsonl"
    write_jsonl(few_path, few)
    syn = []
    for k in range(40):
        d = diseases[k % len(diseases)]
        syn.append(
            toy_record(
                20_000 + k, "disease", keyword_sentence(rng, d), entities=[d]
            )
        )
    syn_path = tmp_path / "ner_syn.jsonl"
    write_jsonl(syn_path, syn)
    return few_path, syn_path
