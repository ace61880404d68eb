"""Metrics: weighted/macro precision-recall-F1, FROC, PR curves, and the
rule-based nodule-to-patient consistency evaluator."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEvaluation

MALIGNANT_CLASSES = ("4", "5")  # nodule classes that flag a patient positive


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [true, predicted]
    classes: list

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.classes)
        if self.counts.shape != (n, n) or (self.counts < 0).any():
            raise ValueError("confusion counts must be a non-negative square matrix")

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    per_class: dict
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    macro_f1: float
    zero_division_flagged: bool = False

    def as_dict(self) -> dict:
        return {
            "per_class": {
                str(label): vars(metrics) for label, metrics in self.per_class.items()
            },
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
        }


def confusion_matrix(y_true, y_pred, classes=None) -> ConfusionMatrix:
    y_true = list(y_true)
    y_pred = list(y_pred)
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    if not y_true:
        raise EmptyEvaluation("no samples to evaluate")
    if classes is None:
        classes = sorted(set(y_true) | set(y_pred))
    index = {label: i for i, label in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts, list(classes))


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class and aggregate precision/recall/F1 from a confusion matrix.

    Zero-denominator metrics are reported as 0 and flagged.
    """
    counts = cm.counts
    tp = np.diag(counts).astype(float)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    flagged = False
    per_class = {}
    precisions, recalls, f1s = [], [], []
    for i, label in enumerate(cm.classes):
        if tp[i] + fp[i] > 0:
            precision = tp[i] / (tp[i] + fp[i])
        else:
            precision, flagged = 0.0, True
        if tp[i] + fn[i] > 0:
            recall = tp[i] / (tp[i] + fn[i])
        else:
            recall, flagged = 0.0, True
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        per_class[label] = ClassMetrics(precision, recall, f1, int(tp[i] + fn[i]))
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    support = cm.support.astype(float)
    total = support.sum()
    if total == 0:
        raise EmptyEvaluation("confusion matrix has zero support")
    weights = support / total
    return MetricsReport(
        per_class=per_class,
        weighted_precision=float(np.dot(weights, precisions)),
        weighted_recall=float(np.dot(weights, recalls)),
        weighted_f1=float(np.dot(weights, f1s)),
        macro_f1=float(np.mean(f1s)),
        zero_division_flagged=flagged,
    )


def weighted_metrics(y_true, y_pred, classes=None) -> MetricsReport:
    """Support-weighted precision/recall/F1 plus macro F1 over label lists."""
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, classes))


def rule_based_patient_eval(
    nodule_predictions: dict, patient_truth: dict
) -> MetricsReport:
    """Patient-level metrics from predicted per-nodule malignancy classes.

    ``nodule_predictions`` maps scan_id -> list of predicted class labels;
    a patient is predicted positive iff any nodule class is 4 or 5 (an empty
    list reads as all-benign, i.e. negative).  ``patient_truth`` maps
    scan_id -> truthy cancer label.
    """
    y_true, y_pred = [], []
    for scan_id, truth in patient_truth.items():
        classes = nodule_predictions.get(scan_id, [])
        positive = any(str(c) in MALIGNANT_CLASSES for c in classes)
        y_true.append("cancer" if truth else "non-cancer")
        y_pred.append("cancer" if positive else "non-cancer")
    return weighted_metrics(y_true, y_pred, classes=["cancer", "non-cancer"])


def froc(
    candidates: list, ground_truth: list, n_scans: int
) -> list[tuple[float, float]]:
    """FROC curve: (false positives per scan, sensitivity) per threshold.

    ``candidates`` are (scan_id, center (z,y,x) mm, score) triples;
    ``ground_truth`` are (scan_id, center, diameter mm) triples.  A candidate
    hits a nodule when its center is within diameter/2 of the nodule center.
    """
    if n_scans <= 0:
        raise EmptyEvaluation("FROC needs at least one scan")
    n_nodules = len(ground_truth)
    matches = []  # per candidate: index of hit nodule or None
    for scan_id, center, score in candidates:
        hit = None
        best = np.inf
        for idx, (gt_scan, gt_center, diameter) in enumerate(ground_truth):
            if gt_scan != scan_id:
                continue
            dist = float(np.linalg.norm(np.asarray(center) - np.asarray(gt_center)))
            if dist <= diameter / 2 and dist < best:
                hit, best = idx, dist
        matches.append((float(score), hit))

    thresholds = sorted({score for score, _ in matches}, reverse=True)
    curve = []
    for threshold in thresholds:
        kept = [(s, h) for s, h in matches if s >= threshold]
        hit_nodules = {h for _, h in kept if h is not None}
        false_positives = sum(1 for _, h in kept if h is None)
        sensitivity = len(hit_nodules) / n_nodules if n_nodules else 0.0
        curve.append((false_positives / n_scans, sensitivity))
    if not curve:
        curve = [(0.0, 0.0)]
    return curve


def pr_curve(y_true, scores) -> list[tuple[float, float]]:
    """Precision-recall points, one per distinct score threshold (descending)."""
    y_true = np.asarray(list(y_true), dtype=bool)
    scores = np.asarray(list(scores), dtype=float)
    if y_true.size == 0:
        raise EmptyEvaluation("no samples to evaluate")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    n_pos = int(y_true.sum())
    if n_pos == 0 or n_pos == y_true.size:
        warnings.warn("single-class truth yields a degenerate PR curve")
    points = []
    for threshold in sorted(set(scores), reverse=True):
        predicted = scores >= threshold
        tp = int((predicted & y_true).sum())
        fp = int((predicted & ~y_true).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / n_pos if n_pos else 0.0
        points.append((precision, recall))
    return points
