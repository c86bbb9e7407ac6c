from pathlib import Path

import pytest

from kitgen.core import (
    FewShotExample,
    FewShotSet,
    PromptMode,
    TaskFamily,
    Topic,
    TopicKind,
)
from kitgen.errors import ConfigError, DataError
from kitgen.promptkit import (
    PairPlan,
    PairStep,
    PromptTemplate,
    TemplatePack,
    compose,
    default_pack,
    render_demonstrations,
    slots_in,
    steps_for,
    substitute,
)

GOLD = Path(__file__).parent / "golden" / "prompts"

ENTITY_TOPIC = Topic(kind=TopicKind.ENTITY, primary_name="stroke", entity_type="Disease")
PAIR_TOPIC = Topic(
    kind=TopicKind.ENTITY_PAIR,
    primary_name="aspirin",
    secondary_name="stroke",
    relation="induces",
    entity_type="Chemical/Disease",
)
STYLE = "medical literature"
FIRST_SENTENCE = "What are the early symptoms of stroke?"


@pytest.fixture
def golden_demos():
    return FewShotSet(
        task_id="x",
        examples=(
            FewShotExample(texts=("The patient presented with a stroke.",), label="disease"),
            FewShotExample(texts=("Aspirin was prescribed for headache.",), label="disease"),
        ),
        shots_per_label=2,
    )


def _compose_for(task, mode, demos):
    kwargs = {"mode": mode}
    if mode == PromptMode.KNOWLEDGE_INFUSED:
        topic = PAIR_TOPIC if task.family == TaskFamily.RELATION_EXTRACTION else ENTITY_TOPIC
        kwargs.update(topic=topic, style=STYLE)
    if mode == PromptMode.DEMO:
        kwargs["demos"] = demos
    return compose(task, task.labels[0], **kwargs)


def _golden_cases(task, mode, demos):
    out = _compose_for(task, mode, demos)
    family = task.family.value
    if isinstance(out, PairPlan):
        yield f"{family}.{mode.value}.PairFirst.txt", out.first.text
        yield f"{family}.{mode.value}.PairSecond.txt", out.second(FIRST_SENTENCE).text
    else:
        yield f"{family}.{mode.value}.Single.txt", out.text


@pytest.mark.parametrize("mode", list(PromptMode))
def test_golden_prompts_every_family(
    mode, ner_task, attr_task, textclass_task, relation_task, nli_task, golden_demos
):
    for task in (ner_task, attr_task, textclass_task, relation_task, nli_task):
        for name, text in _golden_cases(task, mode, golden_demos):
            expected = (GOLD / name).read_text(encoding="utf-8")
            assert text + "\n" == expected, f"golden mismatch for {name}"


def test_ner_knowledge_prompt_names_the_topic(ner_task):
    prompt = compose(
        ner_task, ner_task.labels[0], topic=ENTITY_TOPIC, style=STYLE
    )
    assert "the sentence should mention the disease named stroke" in prompt.text
    assert "the sentence should mimic the style of medical literature" in prompt.text


def test_plain_ner_prompt_is_bare_listing(ner_task):
    prompt = compose(ner_task, ner_task.labels[0], mode=PromptMode.PLAIN)
    assert prompt.text == (
        "Suppose you need to create a dataset for disease recognition."
        " Your task is to generate a sentence about disease and output"
        " a list of named entity about disease only."
    )


def test_relation_with_entity_topic_is_error(relation_task):
    with pytest.raises(DataError, match="EntityPair"):
        compose(relation_task, relation_task.labels[0], topic=ENTITY_TOPIC, style=STYLE)


def test_single_family_with_pair_topic_is_error(ner_task):
    with pytest.raises(DataError, match="Entity topic"):
        compose(ner_task, ner_task.labels[0], topic=PAIR_TOPIC, style=STYLE)


def test_missing_topic_or_style_is_error(ner_task):
    with pytest.raises(DataError, match="topic"):
        compose(ner_task, ner_task.labels[0], style=STYLE)
    with pytest.raises(DataError, match="style"):
        compose(ner_task, ner_task.labels[0], topic=ENTITY_TOPIC)


def test_demo_mode_requires_demos(ner_task):
    with pytest.raises(DataError, match="demo"):
        compose(ner_task, ner_task.labels[0], mode=PromptMode.DEMO)


def test_slot_closure_no_unresolved_markers(
    ner_task, attr_task, textclass_task, relation_task, nli_task, golden_demos
):
    for task in (ner_task, attr_task, textclass_task, relation_task, nli_task):
        for mode in PromptMode:
            out = _compose_for(task, mode, golden_demos)
            texts = (
                [out.first.text, out.second(FIRST_SENTENCE).text]
                if isinstance(out, PairPlan)
                else [out.text]
            )
            for text in texts:
                assert not slots_in(text), f"unresolved slots in {task.id}/{mode.value}"


def test_compose_sha_is_deterministic(ner_task):
    a = compose(ner_task, ner_task.labels[0], topic=ENTITY_TOPIC, style=STYLE)
    b = compose(ner_task, ner_task.labels[0], topic=ENTITY_TOPIC, style=STYLE)
    assert a.sha256 == b.sha256
    assert a.text == b.text


def test_pair_second_carries_label_desc(nli_task):
    plan = compose(nli_task, nli_task.labels[0], topic=ENTITY_TOPIC, style=STYLE)
    assert plan.first.bindings["label_desc"] == "the first question entails the second"
    second = plan.second(FIRST_SENTENCE)
    assert second.bindings["label_desc"] == "the first question entails the second"
    assert FIRST_SENTENCE in second.text


def test_render_demonstrations_block_shape(golden_demos):
    rendered = render_demonstrations(golden_demos)
    blocks = rendered.split("\n\n")
    assert len(blocks) == 2
    for block in blocks:
        assert block.splitlines()[-1].startswith("Label: ")


def test_render_demonstrations_two_sentence_example():
    demos = FewShotSet(
        task_id="x",
        examples=(
            FewShotExample(texts=("First sentence.", "Second sentence."), label="entailment"),
        ),
        shots_per_label=1,
    )
    rendered = render_demonstrations(demos)
    assert rendered == "First sentence.\nSecond sentence.\nLabel: entailment"


def test_render_demonstrations_deterministic(golden_demos):
    assert render_demonstrations(golden_demos) == render_demonstrations(golden_demos)


def test_substitute_rejects_unresolved():
    with pytest.raises(DataError, match="topic"):
        substitute("about [topic]", {})


def test_template_validation_rejects_foreign_slot():
    bad = PromptTemplate(
        family=TaskFamily.NER,
        mode=PromptMode.PLAIN,
        step=PairStep.SINGLE,
        body="talk about [topic]",
    )
    with pytest.raises(ConfigError, match="topic"):
        bad.validate()


def test_knowledge_template_requires_style_slot():
    bad = PromptTemplate(
        family=TaskFamily.NER,
        mode=PromptMode.KNOWLEDGE_INFUSED,
        step=PairStep.SINGLE,
        body="mention [topic] about [domain]",
    )
    with pytest.raises(ConfigError, match="style"):
        bad.validate()


def test_pack_loads_every_combination():
    pack = default_pack()
    for family in TaskFamily:
        for mode in PromptMode:
            for step in steps_for(family):
                assert pack.template(family, mode, step).body


def test_pack_from_directory(tmp_path):
    import shutil
    from importlib import resources

    src = resources.files("kitgen").joinpath("templates")
    dst = tmp_path / "pack"
    shutil.copytree(str(src), dst)
    pack = TemplatePack.load(dst)
    assert pack.raw("elicit_topics")

    (dst / "ner.plain.single.txt").unlink()
    with pytest.raises(ConfigError, match="ner.plain.single.txt"):
        TemplatePack.load(dst)
