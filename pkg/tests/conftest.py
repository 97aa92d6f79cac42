"""Shared independent oracles for the test suite.

These deliberately re-derive metrics from their definitions (exhaustive
pairwise comparison, full per-threshold recounts) so they never share code
with the swept implementations they check.
"""

import numpy as np
import pytest


def pairwise_auc(scores, labels):
    """(#concordant + 0.5 * #tied) / (P * N) by exhaustive comparison."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    diff = pos[:, None] - neg[None, :]
    return (np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / (pos.size * neg.size)


def threshold_pr_points(scores, labels):
    """(recall, precision) after each distinct threshold, by full recount."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    total_pos = labels.sum()
    points = []
    for t in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= t
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        points.append((tp / total_pos, tp / (tp + fp)))
    return points


def oracle_average_precision(scores, labels):
    ap = 0.0
    prev_r = 0.0
    for r, p in threshold_pr_points(scores, labels):
        ap += (r - prev_r) * p
        prev_r = r
    return ap


def oracle_auc_pr(scores, labels):
    points = threshold_pr_points(scores, labels)
    r_prev, p_prev = 0.0, points[0][1]
    area = 0.0
    for r, p in points:
        area += (r - r_prev) * (p + p_prev) / 2.0
        r_prev, p_prev = r, p
    return area


def random_scored_set(rng, n_max=50, force_ties=False):
    """A random scores/labels pair with both classes present."""
    n = int(rng.integers(4, n_max + 1))
    if force_ties:
        scores = rng.choice(np.round(np.linspace(0, 1, 7), 3), size=n)
    else:
        scores = rng.uniform(0, 1, n)
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1  # guarantee both classes
    return scores, labels


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
