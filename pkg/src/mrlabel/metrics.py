"""Classification metrics: accuracy, macro-F1, (multiclass) MCC, ROC-AUC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def _check(pred, true):
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("need at least one prediction")
    return pred, true


def confusion_matrix(pred, true, labels: Optional[Sequence] = None):
    """Rows are true classes, columns predicted; returns ``(matrix, labels)``."""
    pred, true = _check(pred, true)
    if labels is None:
        labels = np.unique(np.concatenate([true, pred]))
    labels = np.asarray(labels)
    lookup = {c.item() if hasattr(c, "item") else c: i for i, c in enumerate(labels)}
    K = len(labels)
    ti = np.array([lookup[c.item()] for c in true])
    pi = np.array([lookup[c.item()] for c in pred])
    cm = np.bincount(ti * K + pi, minlength=K * K).reshape(K, K)
    return cm, labels


def accuracy(pred, true) -> float:
    pred, true = _check(pred, true)
    return float(np.mean(pred == true))


def macro_f1(pred, true, labels: Optional[Sequence] = None) -> float:
    """Unweighted mean of per-class F1; a class with 0/0 precision/recall scores 0."""
    cm, _ = confusion_matrix(pred, true, labels)
    tp = np.diag(cm).astype(float)
    denom = cm.sum(0) + cm.sum(1)  # 2TP + FP + FN
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def mcc(pred, true) -> float:
    """Matthews correlation, K-class generalisation over the confusion matrix.

    Zero-variance denominators (e.g. a constant predictor) give 0.
    """
    cm, _ = confusion_matrix(pred, true)
    cm = cm.astype(float)
    s = cm.sum()
    c = np.trace(cm)
    p = cm.sum(0)
    t = cm.sum(1)
    cov = c * s - p @ t
    denom = np.sqrt((s * s - p @ p) * (s * s - t @ t))
    return float(cov / denom) if denom > 0 else 0.0


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties (average ranks)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("length mismatch")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class FoldReport:
    fold_index: int
    accuracy: float
    macro_f1: float
    mcc: float
    roc_auc: Optional[float] = None
    confusion: np.ndarray = field(default=None, repr=False)
    labels: tuple = ()
    best_epoch: Optional[int] = None

    def metrics(self) -> dict:
        out = {"accuracy": self.accuracy, "roc_auc": self.roc_auc,
               "macro_f1": self.macro_f1, "mcc": self.mcc}
        return {k: v for k, v in out.items() if v is not None}


def evaluate_predictions(probs, true_idx, classes: Sequence, fold_index: int = 0) -> FoldReport:
    """Metrics for class-probability rows ``probs`` against class indices.

    ROC-AUC is reported for two-class problems only (positive = index 1).
    """
    probs = np.asarray(probs)
    true_idx = np.asarray(true_idx)
    pred_idx = probs.argmax(-1)
    labels = np.arange(len(classes))
    cm, _ = confusion_matrix(pred_idx, true_idx, labels)
    auc = None
    if len(classes) == 2 and 0 < true_idx.sum() < true_idx.size:
        auc = roc_auc(probs[:, 1], true_idx == 1)
    return FoldReport(
        fold_index=fold_index,
        accuracy=accuracy(pred_idx, true_idx),
        macro_f1=macro_f1(pred_idx, true_idx),
        mcc=mcc(pred_idx, true_idx),
        roc_auc=auc,
        confusion=cm,
        labels=tuple(classes),
    )


def average_reports(reports: Sequence[FoldReport]) -> dict:
    """Unweighted mean of each metric across folds."""
    keys = reports[0].metrics().keys()
    return {k: float(np.mean([r.metrics()[k] for r in reports])) for k in keys}
