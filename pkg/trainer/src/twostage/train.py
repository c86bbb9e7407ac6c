"""Two-stage fine-tuning: Stage I on the few-shot file, Stage II on the
synthetic dataset warm-started from the Stage I parameters, with a fresh
optimizer and learning-rate schedule (linear warmup then linear decay).

The checkpoint returned for evaluation is the one with the best
validation metric across all epoch-end evaluations; the validation set is
an equal per-label split held out of the few-shot file.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch
from torch import nn
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR

from .config import Loss, TrainConfig
from .data import (
    CLS,
    Example,
    SEP,
    TrainerDataError,
    Vocab,
    bio_labels,
    bio_to_spans,
    load_examples,
    spans_to_bio,
    split_few_shot,
    tokenize,
)
from .metrics import score_labels, score_multilabel, score_spans
from .model import Encoder, parameter_hash

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    token_ids: torch.Tensor
    mask: torch.Tensor
    targets: torch.Tensor


@dataclass
class TrainResult:
    model: Encoder
    vocab: Vocab
    labels: list[str]
    span_classes: list[str]
    config: TrainConfig
    metrics: dict
    log: list[dict] = field(repr=False, default_factory=list)


def _encode_sequence(ex: Example, vocab: Vocab, max_tokens: int) -> list[int]:
    tokens = [CLS] + tokenize(ex.text_primary)
    if ex.text_secondary:
        tokens += [SEP] + tokenize(ex.text_secondary)
    return vocab.encode(tokens[:max_tokens])


def _encode_tokens(ex: Example, vocab: Vocab, max_tokens: int) -> tuple[list[int], list[str]]:
    tokens = tokenize(ex.text_primary)[:max_tokens]
    tags = spans_to_bio(len(tokens), ex.spans)
    return vocab.encode(tokens), tags


def _collate(
    rows: Sequence[tuple[list[int], list[int] | int]],
    token_level: bool,
) -> Batch:
    width = max(len(ids) for ids, _ in rows)
    token_ids = torch.zeros((len(rows), width), dtype=torch.long)
    mask = torch.zeros((len(rows), width), dtype=torch.bool)
    if token_level:
        targets = torch.full((len(rows), width), -100, dtype=torch.long)
    for i, (ids, target) in enumerate(rows):
        token_ids[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask[i, : len(ids)] = True
        if token_level:
            targets[i, : len(target)] = torch.tensor(target, dtype=torch.long)
    if not token_level:
        targets = torch.tensor([target for _, target in rows], dtype=torch.long)
    return Batch(token_ids=token_ids, mask=mask, targets=targets)


class _Task:
    """Encodes examples and scores predictions for one task family."""

    def __init__(self, config: TrainConfig, labels: list[str], span_classes: list[str]):
        self.config = config
        self.labels = labels
        self.span_classes = span_classes
        self.tag_set = bio_labels(span_classes) if config.token_task else []
        self.label_index = {lab: i for i, lab in enumerate(labels)}
        self.tag_index = {tag: i for i, tag in enumerate(self.tag_set)}

    @property
    def num_outputs(self) -> int:
        return len(self.tag_set) if self.config.token_task else len(self.labels)

    def rows(self, examples: Sequence[Example], vocab: Vocab):
        out = []
        for ex in examples:
            if self.config.token_task:
                ids, tags = _encode_tokens(ex, vocab, self.config.max_tokens)
                out.append((ids, [self.tag_index[t] for t in tags]))
            else:
                ids = _encode_sequence(ex, vocab, self.config.max_tokens)
                out.append((ids, self.label_index[ex.label]))
        return out

    def loss_fn(self, logits: torch.Tensor, batch: Batch) -> torch.Tensor:
        loss = self.config.loss
        if loss == Loss.TOKEN_CROSS_ENTROPY:
            return nn.functional.cross_entropy(
                logits.reshape(-1, logits.shape[-1]), batch.targets.reshape(-1),
                ignore_index=-100,
            )
        if loss == Loss.BINARY_CROSS_ENTROPY:
            onehot = nn.functional.one_hot(batch.targets, num_classes=logits.shape[-1])
            return nn.functional.binary_cross_entropy_with_logits(logits, onehot.float())
        return nn.functional.cross_entropy(logits, batch.targets)

    def evaluate(
        self, model: Encoder, examples: Sequence[Example], vocab: Vocab
    ) -> tuple[float, dict]:
        model.eval()
        with torch.no_grad():
            if self.config.token_task:
                gold_spans = []
                pred_spans = []
                for ex in examples:
                    tokens = tokenize(ex.text_primary)[: self.config.max_tokens]
                    ids = vocab.encode(tokens)
                    # gold via the same BIO round-trip used for training
                    # targets; unseen classes survive and count as misses
                    gold_spans.append(bio_to_spans(spans_to_bio(len(tokens), ex.spans)))
                    batch = _collate([(ids, [0] * len(ids))], token_level=True)
                    logits = model(batch.token_ids, batch.mask)
                    pred_ids = logits[0, : len(ids)].argmax(dim=-1).tolist()
                    pred_spans.append(bio_to_spans([self.tag_set[i] for i in pred_ids]))
                span_metrics = score_spans(gold_spans, pred_spans)
                return span_metrics.f1, {"span": span_metrics.to_dict()}
            rows = [
                (_encode_sequence(ex, vocab, self.config.max_tokens), 0) for ex in examples
            ]
            batch = _collate(rows, token_level=False)
            logits = model(batch.token_ids, batch.mask)
            gold = [ex.label for ex in examples]
            if self.config.loss == Loss.BINARY_CROSS_ENTROPY:
                chosen = torch.sigmoid(logits) > 0.5
                predicted_sets = [
                    {self.labels[j] for j in range(len(self.labels)) if chosen[i, j]}
                    for i in range(len(examples))
                ]
                metrics = score_multilabel([{g} for g in gold], predicted_sets, self.labels)
                return metrics.micro_f1, {"label": metrics.to_dict()}
            predicted = [self.labels[i] for i in logits.argmax(dim=-1).tolist()]
            metrics = score_labels(gold, predicted, self.labels)
            return metrics.accuracy, {"label": metrics.to_dict()}


def _linear_schedule(optimizer, total_steps: int, warmup_fraction: float) -> LambdaLR:
    warmup = max(1, int(total_steps * warmup_fraction))

    def factor(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        remaining = max(1, total_steps - warmup)
        return max(0.0, (total_steps - step) / remaining)

    return LambdaLR(optimizer, factor)


def _run_stage(
    stage: str,
    model: Encoder,
    task: _Task,
    train_rows,
    val_examples,
    vocab: Vocab,
    config: TrainConfig,
    log: list[dict],
    best: dict,
) -> None:
    steps_per_epoch = max(1, (len(train_rows) + config.batch_size - 1) // config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    optimizer = AdamW(model.parameters(), lr=config.learning_rate)
    scheduler = _linear_schedule(optimizer, total_steps, config.warmup_fraction)
    generator = torch.Generator().manual_seed(config.seed + (1000 if stage == "stage2" else 0))

    for epoch in range(config.epochs):
        model.train()
        order = torch.randperm(len(train_rows), generator=generator).tolist()
        for start in range(0, len(order), config.batch_size):
            rows = [train_rows[i] for i in order[start : start + config.batch_size]]
            batch = _collate(rows, token_level=config.token_task)
            optimizer.zero_grad()
            logits = model(batch.token_ids, batch.mask)
            loss = task.loss_fn(logits, batch)
            loss.backward()
            optimizer.step()
            scheduler.step()
            log.append(
                {"event": "batch", "stage": stage, "epoch": epoch,
                 "loss": float(loss.detach())}
            )
        metric, detail = task.evaluate(model, val_examples, vocab)
        log.append(
            {"event": "eval", "stage": stage, "epoch": epoch, "metric": metric}
        )
        if metric > best["metric"]:
            best.update(
                metric=metric, stage=stage, epoch=epoch,
                state=copy.deepcopy(model.state_dict()), detail=detail,
            )


def train_two_stage(config: TrainConfig) -> TrainResult:
    """Fine-tune on the few-shot file, then on the synthetic dataset from
    the stage-one parameters. Returns the best-on-validation model."""
    torch.manual_seed(config.seed)
    stage1_all = load_examples(config.stage1_path, config.token_task)
    try:
        stage2 = load_examples(config.stage2_path, config.token_task)
    except (TrainerDataError, FileNotFoundError):
        stage2 = []
        logger.warning("stage-2 dataset %s is empty; running stage 1 only", config.stage2_path)

    stage1_train, stage1_val = split_few_shot(stage1_all)

    labels = sorted({ex.label for ex in stage1_all})
    unknown = {ex.label for ex in stage2} - set(labels)
    if unknown:
        raise TrainerDataError(
            f"stage-2 labels {sorted(unknown)} do not appear in the few-shot file"
        )
    span_classes = sorted(
        {cls for ex in (*stage1_all, *stage2) for _, _, cls in ex.spans}
    )

    task = _Task(config, labels, span_classes)
    vocab = Vocab.build([*stage1_train, *stage2])
    model = Encoder(
        vocab_size=len(vocab),
        num_outputs=task.num_outputs,
        token_level=config.token_task,
        model=config.model,
        max_positions=config.max_tokens + 2,
    )

    log: list[dict] = []
    best = {"metric": -1.0, "stage": None, "epoch": None, "state": None, "detail": None}
    started = time.monotonic()

    stage1_rows = task.rows(stage1_train, vocab)
    _run_stage("stage1", model, task, stage1_rows, stage1_val, vocab, config, log, best)
    hash_stage1_end = parameter_hash(model)

    hash_stage2_start = None
    if stage2:
        # warm start: stage II continues from the stage I parameters with a
        # fresh optimizer and schedule
        hash_stage2_start = parameter_hash(model)
        stage2_rows = task.rows(stage2, vocab)
        _run_stage("stage2", model, task, stage2_rows, stage1_val, vocab, config, log, best)

    if best["state"] is not None:
        model.load_state_dict(best["state"])
    final_metric, final_detail = task.evaluate(model, stage1_val, vocab)

    metrics = {
        "config": config.snapshot(),
        "labels": labels,
        "span_classes": span_classes,
        "validation_size": len(stage1_val),
        "stage2_size": len(stage2),
        "best": {"stage": best["stage"], "epoch": best["epoch"], "metric": best["metric"]},
        "validation": final_detail,
        "validation_metric": final_metric,
        "param_hash_stage1_end": hash_stage1_end,
        "param_hash_stage2_start": hash_stage2_start,
        "duration_s": round(time.monotonic() - started, 3),
    }
    return TrainResult(
        model=model, vocab=vocab, labels=labels, span_classes=span_classes,
        config=config, metrics=metrics, log=log,
    )


def save_checkpoint(result: TrainResult, path: str | Path) -> None:
    torch.save(
        {
            "state_dict": result.model.state_dict(),
            "vocab": result.vocab.token_to_id,
            "labels": result.labels,
            "span_classes": result.span_classes,
            "config": result.config.snapshot(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> TrainResult:
    payload = torch.load(path, weights_only=False)
    snapshot = payload["config"]
    config = TrainConfig(
        family=snapshot["family"],
        stage1_path=snapshot["stage1_path"],
        stage2_path=snapshot["stage2_path"],
        model=snapshot["model"],
        epochs=snapshot["epochs"],
        learning_rate=snapshot["learning_rate"],
        warmup_fraction=snapshot["warmup_fraction"],
        max_tokens=snapshot["max_tokens"],
        batch_size=snapshot["batch_size"],
        multi_label=snapshot["multi_label"],
        seed=snapshot["seed"],
    )
    vocab = Vocab(token_to_id=payload["vocab"])
    task = _Task(config, payload["labels"], payload["span_classes"])
    model = Encoder(
        vocab_size=len(vocab),
        num_outputs=task.num_outputs,
        token_level=config.token_task,
        model=config.model,
        max_positions=config.max_tokens + 2,
    )
    model.load_state_dict(payload["state_dict"])
    return TrainResult(
        model=model, vocab=vocab, labels=payload["labels"],
        span_classes=payload["span_classes"], config=config, metrics={}, log=[],
    )


def evaluate_checkpoint(checkpoint: TrainResult, test_path: str | Path) -> dict:
    """Score a checkpoint on a core-schema JSONL test file."""
    config = checkpoint.config
    examples = load_examples(test_path, config.token_task)
    task = _Task(config, checkpoint.labels, checkpoint.span_classes)
    metric, detail = task.evaluate(checkpoint.model, examples, checkpoint.vocab)
    return {
        "test_size": len(examples),
        "metric": metric,
        **detail,
    }
