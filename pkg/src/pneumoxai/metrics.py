"""Binary-classification evaluation suite.

Covers the thresholded metrics (accuracy, precision, recall, F1, MCC,
Cohen's kappa), the probabilistic ones (Brier score, ROC/AUC), and the
precision-recall curve. Scores >= threshold count as predicted positive.
Zero-denominator cases return 0 and set a `degenerate` flag rather than
raising, so degeneracy stays visible in reports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise MetricError("confusion counts must be nonnegative")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ScoredPrediction:
    score: float
    label: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise MetricError(f"score {self.score} outside [0, 1]")
        if self.label not in (0, 1):
            raise MetricError(f"label {self.label} is not binary")


def _split(preds):
    scores = np.array([p.score for p in preds], dtype=np.float64)
    labels = np.array([p.label for p in preds], dtype=np.int64)
    return scores, labels


def confusion(preds, threshold=0.5):
    if not preds:
        raise MetricError("confusion requires a nonempty prediction list")
    scores, labels = _split(preds)
    pred_pos = scores >= threshold
    return ConfusionMatrix(
        tp=int(np.sum(pred_pos & (labels == 1))),
        fp=int(np.sum(pred_pos & (labels == 0))),
        fn=int(np.sum(~pred_pos & (labels == 1))),
        tn=int(np.sum(~pred_pos & (labels == 0))),
    )


def basic_metrics(cm):
    """Returns (accuracy, precision, recall, f1, degenerate_flag)."""
    if cm.total == 0:
        raise MetricError("empty confusion matrix")
    degenerate = False
    accuracy = (cm.tp + cm.tn) / cm.total
    if cm.tp + cm.fp == 0:
        precision, degenerate = 0.0, True
    else:
        precision = cm.tp / (cm.tp + cm.fp)
    if cm.tp + cm.fn == 0:
        recall, degenerate = 0.0, True
    else:
        recall = cm.tp / (cm.tp + cm.fn)
    if precision + recall == 0:
        f1, degenerate = 0.0, True
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return accuracy, precision, recall, f1, degenerate


def mcc(cm):
    if cm.total == 0:
        raise MetricError("empty confusion matrix")
    denom = (
        (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    )
    if denom == 0:
        return 0.0
    return (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(denom)


def cohens_kappa(cm):
    if cm.total == 0:
        raise MetricError("empty confusion matrix")
    t = cm.total
    p_o = (cm.tp + cm.tn) / t
    p_e = ((cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)) / (t * t)
    if p_e == 1.0:
        return 0.0
    return (p_o - p_e) / (1.0 - p_e)


def brier(preds):
    if not preds:
        raise MetricError("brier requires a nonempty prediction list")
    scores, labels = _split(preds)
    return float(np.mean((scores - labels) ** 2))


def roc_curve_auc(preds):
    """(FPR, TPR) sweep over all score thresholds plus trapezoidal AUC.

    The AUC equals the probability that a random positive outscores a
    random negative, with ties worth one half.
    """
    scores, labels = _split(preds)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs at least one positive and one negative label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:  # advance over tied scores together
            j += 1
        tp += int(y[i:j].sum())
        fp += (j - i) - int(y[i:j].sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, auc


def pr_curve(preds):
    """(recall, precision) points over the descending-threshold sweep."""
    scores, labels = _split(preds)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("PR curve needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    points = []
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += (j - i) - int(y[i:j].sum())
        points.append((tp / n_pos, tp / (tp + fp)))
        i = j
    return points


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    threshold: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    kappa: float
    brier: float
    roc_auc: float | None
    roc_points: list = field(default_factory=list)
    pr_points: list = field(default_factory=list)
    degenerate: bool = False
    notes: dict = field(default_factory=dict)

    def to_json(self):
        doc = {
            "threshold": self.threshold,
            "confusion": {"tp": self.confusion.tp, "fp": self.confusion.fp,
                          "fn": self.confusion.fn, "tn": self.confusion.tn},
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mcc": self.mcc,
            "kappa": self.kappa,
            "brier": self.brier,
            "roc_auc": self.roc_auc,
            "degenerate": self.degenerate,
            "notes": self.notes,
        }
        doc["presentation"] = {
            k: (None if doc[k] is None else f"{doc[k]:.4f}")
            for k in ("accuracy", "precision", "recall", "f1", "mcc", "kappa",
                      "brier", "roc_auc")
        }
        return doc


def full_report(preds, threshold=0.5):
    """Compute every metric the suite supports for one scored prediction set."""
    cm = confusion(preds, threshold)
    accuracy, precision, recall, f1, degenerate = basic_metrics(cm)
    notes = {}
    try:
        roc_points, auc = roc_curve_auc(preds)
    except MetricError as e:
        roc_points, auc = [], None
        notes["roc_auc"] = str(e)
    try:
        pr_points = pr_curve(preds)
    except MetricError as e:
        pr_points = []
        notes["pr_curve"] = str(e)
    return MetricsReport(
        confusion=cm,
        threshold=threshold,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        mcc=mcc(cm),
        kappa=cohens_kappa(cm),
        brier=brier(preds),
        roc_auc=auc,
        roc_points=roc_points,
        pr_points=pr_points,
        degenerate=degenerate,
        notes=notes,
    )


def write_curve_csv(points, path, header):
    with open(path, "w") as f:
        f.write(header + "\n")
        for x, y in points:
            f.write(f"{x!r},{y!r}\n")


def report_to_json_file(report, path):
    with open(path, "w") as f:
        json.dump(report.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
