"""Metrics, classification reports, and cross-domain transfer evaluation.

Class order is fixed everywhere: (negative, neutral, positive). Macro-F1 is
the unweighted mean of the three per-class F1 values, with F1 defined as 0
for a class whose precision + recall is 0 (so a class absent from both gold
and predictions still counts in the average).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .data import LABELS, LabeledExample


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 counts; rows are gold labels, columns predictions."""

    counts: tuple

    @staticmethod
    def from_labels(gold: np.ndarray, pred: np.ndarray) -> "ConfusionMatrix":
        cm = np.zeros((3, 3), dtype=np.int64)
        np.add.at(cm, (np.asarray(gold), np.asarray(pred)), 1)
        return ConfusionMatrix.from_array(cm)

    @staticmethod
    def from_array(cm) -> "ConfusionMatrix":
        arr = np.asarray(cm, dtype=np.int64)
        if arr.shape != (3, 3) or (arr < 0).any():
            raise ValueError(f"confusion matrix must be 3x3 with counts >= 0")
        return ConfusionMatrix(tuple(tuple(int(v) for v in row) for row in arr))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.as_array().sum())


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    model_fingerprint: str
    accuracy: float
    macro_f1: float
    per_class: dict          # label -> {"precision", "recall", "f1"}
    confusion: ConfusionMatrix

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model_fingerprint": self.model_fingerprint,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": {
                name: {k: self.per_class[name][k] for k in ("precision", "recall", "f1")}
                for name in LABELS},
            "confusion": [list(row) for row in self.confusion.counts],
        }


def report_from_confusion(cm: ConfusionMatrix, dataset: str = "unknown",
                          model_fingerprint: str = "") -> EvalReport:
    arr = cm.as_array().astype(np.float64)
    per_class = {}
    f1s = []
    for i, name in enumerate(LABELS):
        tp = arr[i, i]
        fp = arr[:, i].sum() - tp
        fn = arr[i, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class[name] = {"precision": float(precision), "recall": float(recall),
                           "f1": float(f1)}
        f1s.append(f1)
    total = arr.sum()
    accuracy = float(np.trace(arr) / total) if total > 0 else 0.0
    return EvalReport(dataset=dataset, model_fingerprint=model_fingerprint,
                      accuracy=accuracy, macro_f1=float(np.mean(f1s)),
                      per_class=per_class, confusion=cm)


def evaluate(model, examples: Sequence[LabeledExample], max_length: int = 64,
             dataset: str = None, batch_size: int = 128) -> EvalReport:
    """Eval-mode inference over a labeled dataset.

    `model` must provide predict_labels(examples, max_length, batch_size)
    returning class indices, and fingerprint().
    """
    if len(examples) == 0:
        raise ValueError("evaluate needs a non-empty dataset")
    if dataset is None:
        dataset = examples[0].source
    gold = np.asarray([e.label_index for e in examples])
    pred = model.predict_labels(examples, max_length=max_length, batch_size=batch_size)
    cm = ConfusionMatrix.from_labels(gold, pred)
    return report_from_confusion(cm, dataset=dataset,
                                 model_fingerprint=model.fingerprint())


def transfer_suite(model, datasets: Sequence[Tuple[str, Sequence[LabeledExample]]],
                   max_length: int = 64) -> List[EvalReport]:
    """One report per (tag, examples) dataset with a shared model/max_length."""
    if len(datasets) == 0:
        raise ValueError("transfer_suite needs at least one dataset")
    return [evaluate(model, examples, max_length=max_length, dataset=tag)
            for tag, examples in datasets]


def report_render(reports: Sequence[EvalReport], fmt: str = "json") -> str:
    """Serialize reports: canonical full-precision json, or a markdown table
    with per-class and macro rows rounded to 4 decimals."""
    if fmt == "json":
        return json.dumps([r.to_json_dict() for r in reports], indent=2)
    if fmt != "markdown":
        raise ValueError(f"format must be json or markdown, got {fmt!r}")
    lines = ["| dataset | class | precision | recall | f1 | accuracy |",
             "|---|---|---|---|---|---|"]
    for r in reports:
        for name in LABELS:
            m = r.per_class[name]
            lines.append(f"| {r.dataset} | {name} | {m['precision']:.4f} "
                         f"| {m['recall']:.4f} | {m['f1']:.4f} | |")
        lines.append(f"| {r.dataset} | macro | | | {r.macro_f1:.4f} | {r.accuracy:.4f} |")
    return "\n".join(lines) + "\n"
