"""Tie-correct ROC / precision-recall machinery and multi-run aggregation.

The ROC sweep groups tied scores so that the area equals
(#concordant + 0.5 * #tied) / (P * N) exactly; the brute-force pairwise
definition lives in the test suite as the independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UndefinedMetricError


@dataclass(frozen=True)
class ScoredSet:
    """Scores in [0, 1] with aligned binary labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if scores.shape != labels.shape or scores.ndim != 1:
            raise DimensionError("scores/labels", scores.shape, labels.shape)
        if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
            raise UndefinedMetricError("scores must lie in [0, 1]")
        if not np.isin(labels, (0, 1)).all():
            raise UndefinedMetricError("labels must be binary")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)


def _tie_grouped_counts(scores, labels):
    """Cumulative TP/FP after each distinct-score group, descending scores."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # last index of each tie group
    boundary = np.nonzero(np.diff(s))[0]
    ends = np.r_[boundary, s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(1 - y)[ends]
    return tp.astype(np.float64), fp.astype(np.float64)


def auc_roc(s: ScoredSet) -> float:
    """Area under the ROC curve, exact under ties."""
    pos = int(s.labels.sum())
    neg = int(s.labels.size - pos)
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    tp, fp = _tie_grouped_counts(s.scores, s.labels)
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def micro_auc(probabilities, labels) -> float:
    """AUROC over flattened (sample, class) decisions of a 2-class softmax."""
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.size:
        raise DimensionError("probabilities/labels", probs.shape, labels.shape)
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise UndefinedMetricError("probability rows must sum to 1")
    n_classes = probs.shape[1]
    flat_scores = probs.T.reshape(-1)
    flat_labels = np.concatenate([(labels == c).astype(np.int64) for c in range(n_classes)])
    return auc_roc(ScoredSet(flat_scores, flat_labels))


def _pr_points(s: ScoredSet):
    pos = int(s.labels.sum())
    if pos == 0:
        raise UndefinedMetricError("PR metrics need at least one positive")
    tp, fp = _tie_grouped_counts(s.scores, s.labels)
    recall = tp / pos
    precision = tp / (tp + fp)
    return recall, precision


def auc_pr(s: ScoredSet) -> float:
    """Trapezoidal area under the PR curve, anchored at (0, first precision)."""
    recall, precision = _pr_points(s)
    r = np.r_[0.0, recall]
    p = np.r_[precision[0], precision]
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2.0))


def average_precision(s: ScoredSet) -> float:
    """Step-sum AP: sum of (R_i - R_{i-1}) * P_i over descending score groups."""
    recall, precision = _pr_points(s)
    dr = np.diff(np.r_[0.0, recall])
    return float(np.sum(dr * precision))


def recall_at(s: ScoredSet, threshold: float = 0.5) -> float:
    pos = int(s.labels.sum())
    if pos == 0:
        raise UndefinedMetricError("recall needs at least one positive")
    hit = int(((s.scores >= threshold) & (s.labels == 1)).sum())
    return hit / pos


@dataclass(frozen=True)
class RunSummary:
    """Mean and sample (k-1) standard deviation over k runs."""

    mean: float
    std: float | None
    k: int

    def __str__(self):
        if self.std is None:
            return f"{self.mean:.4f}"
        return f"{self.mean:.4f} +/- {self.std:.4f}"


def summarize_runs(values) -> RunSummary:
    vals = [float(v) for v in values]
    if not vals:
        raise UndefinedMetricError("no runs to summarize")
    k = len(vals)
    # fsum is exactly rounded, so the summary is permutation-invariant
    mean = math.fsum(vals) / k
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (k - 1)) if k >= 2 else None
    return RunSummary(mean=mean, std=std, k=k)


def positive_class_scores(probabilities) -> np.ndarray:
    """Column 1 of an N x 2 probability matrix, as a plain score vector."""
    probs = np.asarray(probabilities, dtype=np.float64)
    return probs[:, 1]


def evaluate_probabilities(probabilities, labels, threshold: float = 0.5) -> dict:
    """The reported metric row: micro AUROC plus positive-class ranking metrics."""
    scored = ScoredSet(positive_class_scores(probabilities), labels)
    return {
        "micro_auroc": micro_auc(probabilities, labels),
        "auroc_pos": auc_roc(scored),
        "aucpr": auc_pr(scored),
        "average_precision": average_precision(scored),
        "recall": recall_at(scored, threshold),
    }
