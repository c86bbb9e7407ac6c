"""Training configuration. Defaults: 6 epochs, learning rate 2e-5
(base) / 4e-5 (large), linear warmup over the first 5% of steps then
linear decay, 256 tokens per sequence."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class Family(str, Enum):
    TEXT_CLASSIFICATION = "TextClassification"
    RELATION_EXTRACTION = "RelationExtraction"
    NLI_PAIR = "NLIPair"
    NER = "NER"
    ATTRIBUTE_EXTRACTION = "AttributeExtraction"


class Loss(str, Enum):
    CROSS_ENTROPY = "CrossEntropy"
    BINARY_CROSS_ENTROPY = "BinaryCrossEntropy"
    TOKEN_CROSS_ENTROPY = "TokenLevelCrossEntropy"


_TOKEN_FAMILIES = (Family.NER, Family.ATTRIBUTE_EXTRACTION)


def select_loss(family: Family, multi_label: bool = False) -> Loss:
    """Loss per task family: token-level cross-entropy for token tasks,
    binary cross-entropy for multi-label classification, cross-entropy
    otherwise. Total over all five families."""
    if family in _TOKEN_FAMILIES:
        return Loss.TOKEN_CROSS_ENTROPY
    if multi_label:
        return Loss.BINARY_CROSS_ENTROPY
    return Loss.CROSS_ENTROPY


def default_learning_rate(model: str) -> float:
    return 4e-5 if "large" in model.lower() else 2e-5


@dataclass
class TrainConfig:
    family: Family
    stage1_path: str
    stage2_path: str
    model: str = "tiny-base"
    epochs: int = 6
    learning_rate: float | None = None
    warmup_fraction: float = 0.05
    max_tokens: int = 256
    batch_size: int = 16
    multi_label: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        self.family = Family(self.family)
        if self.learning_rate is None:
            self.learning_rate = default_learning_rate(self.model)

    @property
    def loss(self) -> Loss:
        return select_loss(self.family, self.multi_label)

    @property
    def token_task(self) -> bool:
        return self.family in _TOKEN_FAMILIES

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        with Path(path).open("r", encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def snapshot(self) -> dict:
        return {
            "family": self.family.value,
            "model": self.model,
            "stage1_path": self.stage1_path,
            "stage2_path": self.stage2_path,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "warmup_fraction": self.warmup_fraction,
            "max_tokens": self.max_tokens,
            "batch_size": self.batch_size,
            "loss": self.loss.value,
            "multi_label": self.multi_label,
            "seed": self.seed,
        }
