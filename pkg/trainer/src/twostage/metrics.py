"""Evaluation metrics: accuracy and precision/recall/F1 for label tasks,
span-level exact-match micro P/R/F1 for token tasks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class LabelMetrics:
    accuracy: float
    macro_f1: float
    micro_f1: float
    per_class: dict[str, ClassScores]
    error_labels: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "per_class": {
                name: {"precision": s.precision, "recall": s.recall, "f1": s.f1,
                       "support": s.support}
                for name, s in self.per_class.items()
            },
            "error_labels": self.error_labels,
        }


def score_labels(
    gold: Sequence[str], predicted: Sequence[str], labels: Sequence[str]
) -> LabelMetrics:
    """Single-label scoring. Gold labels outside ``labels`` are counted as
    an error class and reported, never silently dropped."""
    if len(gold) != len(predicted):
        raise ValueError("gold and predicted lengths differ")
    known = set(labels)
    error_labels: dict[str, int] = {}
    correct = 0
    tp = {lab: 0 for lab in labels}
    fp = {lab: 0 for lab in labels}
    fn = {lab: 0 for lab in labels}
    for g, p in zip(gold, predicted):
        if g not in known:
            error_labels[g] = error_labels.get(g, 0) + 1
            continue
        if g == p:
            correct += 1
            tp[g] += 1
        else:
            fn[g] += 1
            if p in known:
                fp[p] += 1
    scored = sum(1 for g in gold if g in known)
    per_class = {}
    for lab in labels:
        precision = tp[lab] / (tp[lab] + fp[lab]) if tp[lab] + fp[lab] else 0.0
        recall = tp[lab] / (tp[lab] + fn[lab]) if tp[lab] + fn[lab] else 0.0
        per_class[lab] = ClassScores(
            precision=precision,
            recall=recall,
            f1=_f1(precision, recall),
            support=tp[lab] + fn[lab],
        )
    total_tp = sum(tp.values())
    total_fp = sum(fp.values())
    total_fn = sum(fn.values())
    micro_p = total_tp / (total_tp + total_fp) if total_tp + total_fp else 0.0
    micro_r = total_tp / (total_tp + total_fn) if total_tp + total_fn else 0.0
    return LabelMetrics(
        accuracy=correct / scored if scored else 0.0,
        macro_f1=sum(s.f1 for s in per_class.values()) / len(labels) if labels else 0.0,
        micro_f1=_f1(micro_p, micro_r),
        per_class=per_class,
        error_labels=error_labels,
    )


@dataclass(frozen=True)
class SpanMetrics:
    precision: float
    recall: float
    f1: float
    gold_spans: int
    predicted_spans: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "gold_spans": self.gold_spans,
            "predicted_spans": self.predicted_spans,
        }


def score_spans(
    gold: Iterable[set[tuple[int, int, str]]],
    predicted: Iterable[set[tuple[int, int, str]]],
) -> SpanMetrics:
    """Micro P/R/F1 over spans; a span counts only on exact boundary and
    exact class match."""
    tp = fp = fn = 0
    n_gold = n_pred = 0
    for g, p in zip(gold, predicted):
        n_gold += len(g)
        n_pred += len(p)
        tp += len(g & p)
        fp += len(p - g)
        fn += len(g - p)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return SpanMetrics(
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        gold_spans=n_gold,
        predicted_spans=n_pred,
    )


def score_multilabel(
    gold: Sequence[set[str]], predicted: Sequence[set[str]], labels: Sequence[str]
) -> LabelMetrics:
    """Micro/macro F1 over label assignments for multi-label tasks."""
    tp = {lab: 0 for lab in labels}
    fp = {lab: 0 for lab in labels}
    fn = {lab: 0 for lab in labels}
    exact = 0
    for g, p in zip(gold, predicted):
        if g == p:
            exact += 1
        for lab in labels:
            if lab in p and lab in g:
                tp[lab] += 1
            elif lab in p:
                fp[lab] += 1
            elif lab in g:
                fn[lab] += 1
    per_class = {}
    for lab in labels:
        precision = tp[lab] / (tp[lab] + fp[lab]) if tp[lab] + fp[lab] else 0.0
        recall = tp[lab] / (tp[lab] + fn[lab]) if tp[lab] + fn[lab] else 0.0
        per_class[lab] = ClassScores(
            precision=precision, recall=recall, f1=_f1(precision, recall),
            support=tp[lab] + fn[lab],
        )
    total_tp = sum(tp.values())
    total_fp = sum(fp.values())
    total_fn = sum(fn.values())
    micro_p = total_tp / (total_tp + total_fp) if total_tp + total_fp else 0.0
    micro_r = total_tp / (total_tp + total_fn) if total_tp + total_fn else 0.0
    return LabelMetrics(
        accuracy=exact / len(gold) if gold else 0.0,
        macro_f1=sum(s.f1 for s in per_class.values()) / len(labels) if labels else 0.0,
        micro_f1=_f1(micro_p, micro_r),
        per_class=per_class,
        error_labels={},
    )
