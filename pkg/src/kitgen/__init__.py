"""Knowledge-infused synthetic text dataset generation and auditing."""

from .core import (
    FewShotExample,
    FewShotSet,
    LabelDef,
    PromptMode,
    SeededRng,
    SyntheticRecord,
    TaskFamily,
    TaskSpec,
    TokenUsage,
    Topic,
    TopicKind,
    TopicSource,
    read_dataset,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "FewShotExample",
    "FewShotSet",
    "LabelDef",
    "PromptMode",
    "SeededRng",
    "SyntheticRecord",
    "TaskFamily",
    "TaskSpec",
    "TokenUsage",
    "Topic",
    "TopicKind",
    "TopicSource",
    "read_dataset",
    "write_dataset",
    "__version__",
]
