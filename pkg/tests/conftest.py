import pytest

from kitgen.core import (
    FewShotExample,
    FewShotSet,
    LabelDef,
    TaskFamily,
    TaskSpec,
    TokenUsage,
    Topic,
    TopicKind,
    SyntheticRecord,
    record_id_for,
)
from kitgen.elicit import manual_styles
from kitgen.kg import Edge, KnowledgeGraph, Node


@pytest.fixture
def ner_task():
    return TaskSpec(
        id="disease-ner",
        family=TaskFamily.NER,
        domain_phrase="disease",
        labels=(LabelDef("disease", "a disease mention"),),
        topic_entity_types=("Disease",),
    )


@pytest.fixture
def attr_task():
    return TaskSpec(
        id="med-attributes",
        family=TaskFamily.ATTRIBUTE_EXTRACTION,
        domain_phrase="clinical attributes",
        labels=(LabelDef("attributes", "medication attributes"),),
        attribute_classes=("Medication", "Dosage", "Route", "Frequency", "Reason", "Duration"),
        topic_entity_types=("Disease",),
    )


@pytest.fixture
def textclass_task():
    return TaskSpec(
        id="cancer-doc-topics",
        family=TaskFamily.TEXT_CLASSIFICATION,
        domain_phrase="Cancer Document",
        labels=(
            LabelDef("inducing angiogenesis", "growth of new blood vessels"),
            LabelDef("resisting cell death", "evasion of apoptosis"),
        ),
        topic_entity_types=("Disease",),
    )


@pytest.fixture
def relation_task():
    return TaskSpec(
        id="chem-disease-re",
        family=TaskFamily.RELATION_EXTRACTION,
        domain_phrase="Chemical Disease Relation",
        labels=(
            LabelDef("induces", "the chemical induces the disease"),
            LabelDef("no relation", "there is no relation between them"),
        ),
        entity_roles=("chemical", "disease"),
        topic_entity_types=("Chemical", "Disease"),
    )


@pytest.fixture
def nli_task():
    return TaskSpec(
        id="question-entailment",
        family=TaskFamily.NLI_PAIR,
        domain_phrase="Question Entailment",
        content_phrase="health question",
        labels=(
            LabelDef("entailment", "the first question entails the second"),
            LabelDef("no entailment", "the second question is unrelated to the first"),
        ),
        topic_entity_types=("Disease",),
    )


@pytest.fixture
def all_tasks(ner_task, attr_task, textclass_task, relation_task, nli_task):
    return {
        task.id: task
        for task in (ner_task, attr_task, textclass_task, relation_task, nli_task)
    }


@pytest.fixture
def tiny_kg():
    nodes = {}
    for i in range(8):
        nodes[f"d{i}"] = Node(f"d{i}", f"disorder {i}", "Disease")
    for i in range(8):
        nodes[f"c{i}"] = Node(f"c{i}", f"compound {i}", "Chemical")
    edges = [Edge(f"c{i}", "induces", f"d{i}") for i in range(8)]
    return KnowledgeGraph(nodes=nodes, edges=edges)


@pytest.fixture
def styles():
    return manual_styles(
        ["medical literature", "patient-doctor dialogues", "clinical trial reports"]
    )


@pytest.fixture
def ner_demos():
    return FewShotSet(
        task_id="disease-ner",
        examples=tuple(
            FewShotExample(
                texts=(f"The patient presented with disorder {i}.",),
                label="disease",
                annotations={"entities": [f"disorder {i}"]},
            )
            for i in range(5)
        ),
        shots_per_label=5,
    )


def make_record(index: int, seed: int = 11, **overrides) -> SyntheticRecord:
    defaults = dict(
        record_id=record_id_for(seed, index),
        task_id="disease-ner",
        label="disease",
        text_primary=f"Sentence number {index} mentions disorder {index % 5}.",
        entities=(f"disorder {index % 5}",),
        topic=Topic(kind=TopicKind.ENTITY, primary_name=f"disorder {index % 5}", entity_type="Disease"),
        style="medical literature",
        prompt_sha256="0" * 64,
        model_id="mock-model",
        usage=TokenUsage(10 + index, 20 + index),
    )
    defaults.update(overrides)
    return SyntheticRecord(**defaults)
