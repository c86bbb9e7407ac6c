"""Two-stage fine-tuning of a downstream classifier on few-shot plus
synthetic JSONL datasets."""

from .config import Family, Loss, TrainConfig, select_loss
from .train import (
    TrainResult,
    evaluate_checkpoint,
    load_checkpoint,
    save_checkpoint,
    train_two_stage,
)

__version__ = "0.1.0"

__all__ = [
    "Family",
    "Loss",
    "TrainConfig",
    "TrainResult",
    "select_loss",
    "train_two_stage",
    "save_checkpoint",
    "load_checkpoint",
    "evaluate_checkpoint",
    "__version__",
]
