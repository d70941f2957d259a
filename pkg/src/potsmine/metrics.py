"""Evaluation metrics: masked regression errors, binary classification
statistics with rank-based ROC AUC, and clustering agreement scores.

Masked metrics select cells by boolean indexing, so whatever garbage sits
in masked-out cells (including NaN) can never leak into a result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


def _masked_diff(pred, target, mask, name: str):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise InvalidInputError(
            f"{name}: shapes differ {pred.shape}, {target.shape}, {mask.shape}")
    hit = mask != 0
    if not hit.any():
        raise InvalidInputError(f"{name}: mask selects no cells")
    return pred[hit], target[hit]


def masked_mae(pred, target, mask) -> float:
    p, t = _masked_diff(pred, target, mask, "masked_mae")
    return float(np.abs(p - t).mean())


def masked_mse(pred, target, mask) -> float:
    p, t = _masked_diff(pred, target, mask, "masked_mse")
    d = p - t
    return float((d * d).mean())


def masked_rmse(pred, target, mask) -> float:
    return float(np.sqrt(masked_mse(pred, target, mask)))


def masked_mre(pred, target, mask) -> float:
    """Sum of absolute errors over the sum of absolute targets, masked."""
    p, t = _masked_diff(pred, target, mask, "masked_mre")
    denom = np.abs(t).sum()
    if denom == 0:
        raise InvalidInputError("masked_mre: target magnitudes sum to zero")
    return float(np.abs(p - t).sum() / denom)


@dataclass
class BinaryMetricsReport:
    """Threshold metrics plus ranking AUCs for a binary problem.

    roc_auc and pr_auc are None when only one class is present.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float | None
    pr_auc: float | None
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int

    _KEYS = ("accuracy", "precision", "recall", "f1", "roc_auc", "pr_auc",
             "threshold", "tp", "fp", "tn", "fn")

    def to_text(self) -> str:
        lines = []
        for key in self._KEYS:
            v = getattr(self, key)
            if v is None:
                lines.append(f"{key}: nan")
            elif isinstance(v, int):
                lines.append(f"{key}: {v}")
            else:
                lines.append(f"{key}: {format(float(v), '.10g')}")
        return "\n".join(lines)


def _roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    # Mann-Whitney rank statistic; tied scores share their midrank, which
    # credits ties as half-wins.
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < sorted_scores.size:
        j = i
        while j + 1 < sorted_scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _pr_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    # Step summation over descending distinct thresholds: sum over steps of
    # (recall_k - recall_{k-1}) * precision_k.
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    total_pos = int((labels == 1).sum())
    tp = 0
    seen = 0
    prev_recall = 0.0
    area = 0.0
    i = 0
    n = scores.size
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int((sorted_labels[i:j + 1] == 1).sum())
        seen = j + 1
        precision = tp / seen
        recall = tp / total_pos
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(area)


def binary_classification_metrics(scores, labels,
                                  threshold: float = 0.5) -> BinaryMetricsReport:
    """Confusion counts at a threshold plus ROC AUC and PR AUC.

    scores are probabilities of the positive class; a sample is predicted
    positive when score >= threshold. Undefined ratios (empty denominators)
    are reported as 0.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise InvalidInputError(
            f"binary metrics: {scores.shape[0]} scores vs {labels.shape[0]} labels")
    if scores.size == 0:
        raise InvalidInputError("binary metrics: empty input")
    if not np.all((labels == 0) | (labels == 1)):
        raise InvalidInputError("binary metrics: labels must be 0 or 1")
    labels = labels.astype(np.int64)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    tn = int(np.sum(~pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    accuracy = (tp + tn) / scores.size
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if (precision + recall) > 0 else 0.0)
    both_classes = 0 < int((labels == 1).sum()) < labels.size
    roc = _roc_auc(scores, labels) if both_classes else None
    pr = _pr_auc(scores, labels) if both_classes else None
    return BinaryMetricsReport(
        accuracy=float(accuracy), precision=float(precision), recall=float(recall),
        f1=float(f1), roc_auc=roc, pr_auc=pr, threshold=float(threshold),
        tp=tp, fp=fp, tn=tn, fn=fn)


def _check_partitions(a, b, name: str):
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.shape != b.shape:
        raise InvalidInputError(f"{name}: label vectors differ in length")
    if a.size < 2:
        raise InvalidInputError(f"{name}: need at least two points")
    return a, b


def rand_index(pred_labels, true_labels) -> float:
    """Fraction of point pairs on which two partitions agree."""
    a, b = _check_partitions(pred_labels, true_labels, "rand_index")
    n = a.size
    _, a_ids = np.unique(a, return_inverse=True)
    _, b_ids = np.unique(b, return_inverse=True)
    contingency = np.zeros((a_ids.max() + 1, b_ids.max() + 1), dtype=np.int64)
    np.add.at(contingency, (a_ids, b_ids), 1)
    comb2 = lambda x: x * (x - 1) // 2
    same_both = comb2(contingency).sum()
    same_a = comb2(contingency.sum(axis=1)).sum()
    same_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(n)
    agreements = total + 2 * same_both - same_a - same_b
    return float(agreements / total)


def purity(pred_labels, true_labels) -> float:
    """Fraction of points in the majority true class of their cluster."""
    a, b = _check_partitions(pred_labels, true_labels, "purity")
    _, a_ids = np.unique(a, return_inverse=True)
    _, b_ids = np.unique(b, return_inverse=True)
    contingency = np.zeros((a_ids.max() + 1, b_ids.max() + 1), dtype=np.int64)
    np.add.at(contingency, (a_ids, b_ids), 1)
    return float(contingency.max(axis=1).sum() / a.size)
