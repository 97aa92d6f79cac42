"""Exact t-SNE for embedding dense-layer activations into 2-D.

O(N^2) pairwise affinities with per-point bandwidths found by binary search
on the conditional-row entropy; gradient descent on KL(P||Q) with the
standard momentum schedule, gain adaptation, and early exaggeration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConfigError, SchemaError
from .numcore import RngStream

_TINY = 1e-30


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    out_dims: int = 2
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 250:
            raise ConfigError("t-SNE needs at least 250 iterations")


def _row_entropy_probs(neg_dist_row, beta):
    """Shannon entropy (bits) and probabilities of one conditional row."""
    p = np.exp(neg_dist_row * beta)
    total = p.sum()
    if total <= 0.0:
        return 0.0, p
    p /= total
    nz = p > 0
    entropy = -np.sum(p[nz] * np.log2(p[nz]))
    return entropy, p


def conditional_affinities(sq_dists, perplexity, tol=1e-4, max_steps=50):
    """Per-point bandwidth search so each row's perplexity matches the target.

    Returns (P conditional rows, achieved entropies in bits).
    """
    n = sq_dists.shape[0]
    target = np.log2(perplexity)
    p_cond = np.zeros((n, n))
    entropies = np.zeros(n)
    for i in range(n):
        row = -sq_dists[i].copy()
        row[i] = -np.inf  # exclude self: exp -> 0
        beta, lo, hi = 1.0, 0.0, np.inf
        entropy, p = _row_entropy_probs(row, beta)
        for _ in range(max_steps):
            if abs(entropy - target) <= tol:
                break
            if entropy > target:  # too flat: increase precision
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
            entropy, p = _row_entropy_probs(row, beta)
        p_cond[i] = p
        entropies[i] = entropy
    return p_cond, entropies


def _squared_distances(x):
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * np.einsum("ij,kj->ik", x, x)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def kl_and_gradient(p, y, exaggeration=1.0):
    """KL(P||Q) against the true P and the (possibly exaggerated) gradient.

    One deterministic optimizer step; permuting p and y together permutes the
    gradient rows (up to reduction rounding).
    """
    n = y.shape[0]
    num = 1.0 / (1.0 + _squared_distances(y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    mask = ~np.eye(n, dtype=bool)
    kl = float(np.sum(p[mask] * np.log(np.maximum(p[mask], _TINY)
                                       / np.maximum(q[mask], _TINY))))
    pq = (exaggeration * p - q) * num
    grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
    return kl, grad


def tsne(points, cfg: TsneConfig, init=None):
    """Embed points (N x D) into cfg.out_dims; returns (coords, kl_trace).

    The KL trace is computed against the un-exaggerated P at every iteration.
    init overrides the seeded Gaussian starting layout (row-aligned with
    points); permuting points and init together permutes the output.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if n < 4 or n > 2000:
        raise ConfigError(f"exact t-SNE supports 4 <= N <= 2000, got {n}")
    if cfg.perplexity >= n / 3:
        raise ConfigError(f"perplexity {cfg.perplexity} infeasible for N={n} (needs < N/3)")

    p_cond, _ = conditional_affinities(_squared_distances(x), cfg.perplexity)
    p = (p_cond + p_cond.T) / (2.0 * n)

    if init is not None:
        y = np.array(init, dtype=np.float64)
        if y.shape != (n, cfg.out_dims):
            raise ConfigError(f"init shape {y.shape} != ({n}, {cfg.out_dims})")
    else:
        y = RngStream(cfg.seed, (42,)).normal(0.0, 1e-4, (n, cfg.out_dims))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_trace = []

    for it in range(cfg.iterations):
        exaggeration = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        momentum = cfg.momentum_start if it < cfg.momentum_switch else cfg.momentum_final

        kl, grad = kl_and_gradient(p, y, exaggeration)
        kl_trace.append(kl)

        flips = np.sign(grad) != np.sign(update)
        gains = np.where(flips, gains + 0.2, gains * 0.8)
        np.clip(gains, 0.01, None, out=gains)
        update = momentum * update - cfg.learning_rate * gains * grad
        y = y + update
        y = y - y.mean(axis=0)

    return y, kl_trace


def project_patients(activation_sets, cfg: TsneConfig, threshold=0.5) -> pd.DataFrame:
    """Join t-SNE coordinates of one or two activation exports with their flags.

    activation_sets: list of (activations, meta) as produced by the
    experiments exporter; meta needs patient_ids, labels, predicted, window.
    With two windows, paired coordinates and a flip column are emitted for
    arrow rendering by an external plotter.
    """
    if not 1 <= len(activation_sets) <= 2:
        raise SchemaError("project_patients takes one or two activation sets")
    metas = [m for _, m in activation_sets]
    ids = [list(m["patient_ids"]) for m in metas]
    if len(ids) == 2 and ids[0] != ids[1]:
        raise SchemaError("activation sets cover different patients")
    for acts, meta in activation_sets:
        if acts.shape[0] != len(meta["patient_ids"]):
            raise SchemaError("activation rows do not match patient ids")

    out = pd.DataFrame({"patient_id": ids[0],
                        "label": np.asarray(metas[0]["labels"], dtype=int)})
    preds = []
    for w_i, (acts, meta) in enumerate(activation_sets):
        coords, _ = tsne(acts, TsneConfig(**{**cfg.__dict__, "seed": cfg.seed + w_i}))
        tag = meta.get("window_label") or "+".join(meta["window"])
        pred = np.asarray(meta["predicted"], dtype=int)
        preds.append(pred)
        label = out["label"].to_numpy()
        cell = np.where(pred == 1, np.where(label == 1, "TP", "FP"),
                        np.where(label == 1, "FN", "TN"))
        out[f"x_{tag}"] = coords[:, 0]
        out[f"y_{tag}"] = coords[:, 1]
        out[f"pred_{tag}"] = pred
        out[f"cell_{tag}"] = cell
    if len(activation_sets) == 2:
        out["flipped"] = (preds[0] != preds[1]).astype(int)
    return out
