"""Uniform fit/predict surface over the model zoo.

Neural kinds run mini-batch Adam on softmax cross entropy with per-epoch
validation micro-AUROC model selection; the forest sweeps its estimator grid
against the same validation metric. Everything is deterministic given the
TrainConfig seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import metrics as mx
from .. import numcore as nc
from ..errors import ConfigError, NonFiniteLossError
from ..features import SliceTensor, flatten_for_tabular
from ..numcore import RngStream
from .forest import RandomForestModel
from .nets import (
    Cnn1dClassifier,
    EmbedConfig,
    EmbeddingMLP,
    LSTMClassifier,
    LogisticRegressionModel,
    MLPClassifier,
)

MODEL_KINDS = ("lr", "mlp", "rf", "cnn", "lstm", "embmlp")
_PREDICT_CHUNK = 1024


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    learning_rate: float = 1e-3
    max_epochs: int = 100
    seed: int = 0
    selection_metric: str = "micro_auroc"
    # model hyperparameters (paper-scale defaults; experiments override)
    d_emb: int = 32
    hidden: int = 128
    input_dropout: float = 0.2
    mlp_widths: tuple = (256, 256)
    mlp_dropout: tuple = (0.15, 0.10)
    cnn_widths: tuple = (4, 8, 16, 32, 64)
    cnn_channels: int = 32
    rf_grid: tuple = (50, 100, 200, 400)
    rf_bootstrap: bool = True

    def replace(self, **kw):
        from dataclasses import replace as _replace
        return _replace(self, **kw)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_metric: float
    is_best: bool


@dataclass
class FitResult:
    model: object
    trace: list = field(default_factory=list)
    best_epoch: int | None = None
    rf_sweep: list = field(default_factory=list)  # (n_estimators, val_metric)

    @property
    def kind(self):
        return self.model.kind


def build_model(kind, tensor: SliceTensor, cfg: TrainConfig, rng: RngStream):
    v = tensor.vocabulary.size
    t = tensor.window.t
    if kind == "lr":
        return LogisticRegressionModel(t * v + tensor.demographics.shape[1], rng)
    if kind == "mlp":
        return MLPClassifier(t * v + tensor.demographics.shape[1], rng,
                             widths=cfg.mlp_widths, dropout=cfg.mlp_dropout)
    if kind == "lstm":
        return LSTMClassifier(EmbedConfig(v, cfg.d_emb, cfg.hidden, t), rng,
                              input_dropout=cfg.input_dropout)
    if kind == "embmlp":
        return EmbeddingMLP(EmbedConfig(v, cfg.d_emb, cfg.hidden, t), rng,
                            input_dropout=cfg.input_dropout)
    if kind == "cnn":
        widths = tuple(w for w in cfg.cnn_widths if w <= v)
        if not widths:
            raise ConfigError(f"no CNN filter width fits vocabulary size {v}")
        return Cnn1dClassifier(EmbedConfig(v, cfg.d_emb, cfg.hidden, t), rng,
                               filter_widths=widths, channels=cfg.cnn_channels)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def _selection_value(model, tensor, metric_name):
    probs = predict_proba(model, tensor)
    if metric_name == "micro_auroc":
        return mx.micro_auc(probs, tensor.labels)
    if metric_name == "auroc_pos":
        return mx.auc_roc(mx.ScoredSet(probs[:, 1], tensor.labels))
    raise ConfigError(f"unknown selection metric {metric_name!r}")


def _mean_loss(model, inputs, labels):
    logits, _ = model.forward(*inputs, training=False)
    loss, _ = nc.softmax_cross_entropy(logits, labels)
    return float(loss)


def train_classifier(model, train_tensor: SliceTensor, val_tensor: SliceTensor,
                     cfg: TrainConfig) -> FitResult:
    """Mini-batch Adam with validation-based snapshot selection.

    Returns the model holding the parameters of the epoch whose validation
    metric was maximal (earliest epoch wins ties); the trace includes an
    epoch-0 row with the untrained loss.
    """
    inputs = model.prepare(train_tensor)
    labels = train_tensor.labels
    n = len(labels)
    rng = RngStream(cfg.seed)
    dropout_rng = rng.child(101)
    result = FitResult(model=model)

    initial = _mean_loss(model, inputs, labels)
    result.trace.append(EpochRecord(0, initial, float("nan"), False))

    best_metric = -np.inf
    best_values = None
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.child(102, epoch).permutation(n)
        loss_sum = 0.0
        for b_i, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            batch = tuple(a[idx] for a in inputs)
            logits, cache = model.forward(*batch, training=True, rng=dropout_rng)
            loss, dlogits = nc.softmax_cross_entropy(logits, labels[idx])
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch, b_i)
            model.backward(cache, dlogits)
            for p in model.params():
                nc.adam_step(p, cfg.learning_rate)
            loss_sum += float(loss) * len(idx)
        val_metric = _selection_value(model, val_tensor, cfg.selection_metric)
        is_best = val_metric > best_metric
        if is_best:
            best_metric = val_metric
            best_values = [p.value.copy() for p in model.params()]
            result.best_epoch = epoch
        result.trace.append(EpochRecord(epoch, loss_sum / n, val_metric, is_best))
    if best_values is not None:
        for p, v in zip(model.params(), best_values):
            p.value[...] = v
    return result


def fit_model(kind, train_tensor: SliceTensor, val_tensor: SliceTensor,
              cfg: TrainConfig) -> FitResult:
    """Train any model kind; the forest runs its validation estimator sweep."""
    if kind == "rf":
        return _fit_forest(train_tensor, val_tensor, cfg)
    model = build_model(kind, train_tensor, cfg, RngStream(cfg.seed).child(100))
    return train_classifier(model, train_tensor, val_tensor, cfg)


def _fit_forest(train_tensor, val_tensor, cfg: TrainConfig) -> FitResult:
    x = flatten_for_tabular(train_tensor)
    grid = tuple(cfg.rf_grid)
    full = RandomForestModel(max(grid), seed=cfg.seed, bootstrap=cfg.rf_bootstrap)
    full.fit(x, train_tensor.labels)
    result = FitResult(model=full)
    best = None
    for k in grid:
        candidate = full.with_trees(k)
        metric = _selection_value(candidate, val_tensor, cfg.selection_metric)
        result.rf_sweep.append((k, metric))
        if best is None or metric > best[1]:
            best = (k, metric, candidate)
    result.model = best[2]
    return result


def predict_proba(model, tensor: SliceTensor) -> np.ndarray:
    """N x 2 probabilities; pure forward pass, invariant to batch partitioning."""
    inputs = model.prepare(tensor)
    n = tensor.n
    if isinstance(model, RandomForestModel):
        return model.predict_proba_matrix(inputs[0])
    out = np.empty((n, 2))
    for start in range(0, n, _PREDICT_CHUNK):
        batch = tuple(a[start:start + _PREDICT_CHUNK] for a in inputs)
        logits, _ = model.forward(*batch, training=False)
        out[start:start + _PREDICT_CHUNK] = nc.softmax_probs(logits)
    return out
