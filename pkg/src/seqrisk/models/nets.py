"""Neural classifiers with hand-derived backward passes.

Every model exposes the same surface: prepare(tensor) caches its input
arrays, forward(...) returns (logits, cache), backward(cache, dlogits)
accumulates parameter gradients. Slices are fed oldest-first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numcore as nc
from ..errors import ConfigError, DimensionError, SequenceTooShortError
from ..features import DEMOGRAPHIC_WIDTH, SliceTensor, flatten_for_tabular
from ..numcore import Param, RngStream


@dataclass(frozen=True)
class EmbedConfig:
    """Shapes of the frequency-concatenation embedding scheme.

    d_emb includes the frequency slot, so learned rows are d_emb - 1 wide and
    each step's input vector has 12 + v * d_emb entries.
    """

    v: int
    d_emb: int
    h: int
    t: int

    def __post_init__(self):
        if self.d_emb < 2:
            raise ConfigError(f"d_emb must be >= 2 (one learned dim + frequency slot), got {self.d_emb}")
        if min(self.v, self.h, self.t) < 1:
            raise ConfigError(f"bad embed config {self}")

    @property
    def input_width(self):
        return DEMOGRAPHIC_WIDTH + self.v * self.d_emb

    @property
    def head_width(self):
        return self.t * self.h


def build_input_sequence(counts_t, demo, embedding):
    """One step's input: demo(12) ++ per-concept [embedding row, count].

    counts_t: (B, V); demo: (B, 12); embedding: (V, d_emb - 1). Zero-count
    concepts still contribute their embedding with a zero frequency slot.
    """
    b, v = counts_t.shape
    if embedding.shape[0] != v:
        raise DimensionError("counts/embedding", counts_t.shape, embedding.shape)
    d = embedding.shape[1] + 1
    block = np.empty((b, v, d))
    block[:, :, : d - 1] = embedding[None, :, :]
    block[:, :, d - 1] = counts_t
    return np.concatenate([demo, block.reshape(b, v * d)], axis=1)


def input_sequence_embedding_grad(dx, v, d):
    """Embedding gradient contribution of one step (summed over the batch)."""
    b = dx.shape[0]
    block = dx[:, DEMOGRAPHIC_WIDTH:].reshape(b, v, d)
    return block[:, :, : d - 1].sum(axis=0)


def _check_tensor(tensor: SliceTensor, v, t):
    if tensor.vocabulary.size != v or tensor.window.t != t:
        raise DimensionError(
            "tensor does not match model (V, T)", (tensor.vocabulary.size, tensor.window.t), (v, t)
        )


class LSTMClassifier:
    """Embedding + single LSTM + fully connected head over all hidden states."""

    kind = "lstm"

    def __init__(self, cfg: EmbedConfig, rng: RngStream, input_dropout=0.2):
        self.cfg = cfg
        self.input_dropout = input_dropout
        d = cfg.d_emb - 1
        self.embedding = nc.embedding_uniform(rng.child(0), cfg.v, d, "embedding")
        self.w = nc.glorot_uniform(rng.child(1), cfg.input_width, 4 * cfg.h, "lstm_w")
        self.u = nc.glorot_uniform(rng.child(2), cfg.h, 4 * cfg.h, "lstm_u")
        bias = np.zeros((1, 4 * cfg.h))
        bias[0, cfg.h:2 * cfg.h] = 1.0  # forget gate opens at init
        self.b = Param(bias, "lstm_b")
        self.head_w = nc.glorot_uniform(rng.child(3), cfg.head_width, 2, "head_w")
        self.head_b = Param(np.zeros((1, 2)), "head_b")

    def params(self):
        return [self.embedding, self.w, self.u, self.b, self.head_w, self.head_b]

    def prepare(self, tensor: SliceTensor):
        _check_tensor(tensor, self.cfg.v, self.cfg.t)
        return tensor.counts, tensor.demographics

    def forward(self, counts, demo, training=False, rng=None):
        cfg = self.cfg
        h_dim = cfg.h
        b = counts.shape[0]
        h_prev = np.zeros((b, h_dim))
        c_prev = np.zeros((b, h_dim))
        steps = []
        hidden = np.empty((b, cfg.t * h_dim))
        for t in range(cfg.t):
            x = build_input_sequence(counts[:, t, :], demo, self.embedding.value)
            x, mask = nc.dropout(x, self.input_dropout, rng, training) if training else (x, None)
            z = nc.dot(x, self.w.value) + nc.dot(h_prev, self.u.value) + self.b.value
            i = nc.sigmoid(z[:, :h_dim])
            f = nc.sigmoid(z[:, h_dim:2 * h_dim])
            g = np.tanh(z[:, 2 * h_dim:3 * h_dim])
            o = nc.sigmoid(z[:, 3 * h_dim:])
            c = f * c_prev + i * g
            tanh_c = np.tanh(c)
            h = o * tanh_c
            steps.append((x, mask, h_prev, c_prev, i, f, g, o, tanh_c))
            hidden[:, t * h_dim:(t + 1) * h_dim] = h
            h_prev, c_prev = h, c
        logits = nc.affine_forward(hidden, self.head_w, self.head_b)
        return logits, (steps, hidden)

    def backward(self, cache, dlogits):
        steps, hidden = cache
        cfg = self.cfg
        h_dim = cfg.h
        v, d = cfg.v, cfg.d_emb
        dhidden = nc.affine_backward(dlogits, hidden, self.head_w, self.head_b)
        dh_carry = np.zeros((dlogits.shape[0], h_dim))
        dc_carry = np.zeros_like(dh_carry)
        for t in reversed(range(cfg.t)):
            x, mask, h_prev, c_prev, i, f, g, o, tanh_c = steps[t]
            dh = dhidden[:, t * h_dim:(t + 1) * h_dim] + dh_carry
            do = dh * tanh_c
            dc = dc_carry + dh * o * (1.0 - tanh_c * tanh_c)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)],
                axis=1,
            )
            self.w.grad += nc.dot_at(x, dz)
            self.u.grad += nc.dot_at(h_prev, dz)
            self.b.grad += dz.sum(axis=0, keepdims=True)
            dx = nc.dot_bt(dz, self.w.value)
            dx = nc.dropout_backward(dx, mask, self.input_dropout)
            self.embedding.grad += input_sequence_embedding_grad(dx, v, d)
            dh_carry = nc.dot_bt(dz, self.u.value)
            dc_carry = dc * f

    def hidden_states(self, counts, demo):
        """Eval-mode head input, (B, T*H); the dense activations for projection."""
        _, (steps, hidden) = self.forward(counts, demo, training=False)
        return hidden


class LogisticRegressionModel:
    """Softmax regression on the flattened tabular representation."""

    kind = "lr"

    def __init__(self, n_features, rng: RngStream):
        self.n_features = n_features
        self.w = nc.glorot_uniform(rng.child(0), n_features, 2, "lr_w")
        self.b = Param(np.zeros((1, 2)), "lr_b")

    def params(self):
        return [self.w, self.b]

    def prepare(self, tensor: SliceTensor):
        x = flatten_for_tabular(tensor)
        if x.shape[1] != self.n_features:
            raise DimensionError("tabular input", x.shape, self.w.value.shape)
        return (x,)

    def forward(self, x, training=False, rng=None):
        return nc.affine_forward(x, self.w, self.b), (x,)

    def backward(self, cache, dlogits):
        (x,) = cache
        nc.affine_backward(dlogits, x, self.w, self.b)


class MLPClassifier:
    """Two hidden relu layers with post-activation dropout, on tabular input."""

    kind = "mlp"

    def __init__(self, n_features, rng: RngStream, widths=(256, 256), dropout=(0.15, 0.10)):
        self.n_features = n_features
        self.widths = tuple(widths)
        self.dropout = tuple(dropout)
        w1, w2 = self.widths
        self.w1 = nc.glorot_uniform(rng.child(0), n_features, w1, "mlp_w1")
        self.b1 = Param(np.zeros((1, w1)), "mlp_b1")
        self.w2 = nc.glorot_uniform(rng.child(1), w1, w2, "mlp_w2")
        self.b2 = Param(np.zeros((1, w2)), "mlp_b2")
        self.w3 = nc.glorot_uniform(rng.child(2), w2, 2, "mlp_w3")
        self.b3 = Param(np.zeros((1, 2)), "mlp_b3")

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def prepare(self, tensor: SliceTensor):
        x = flatten_for_tabular(tensor)
        if x.shape[1] != self.n_features:
            raise DimensionError("tabular input", x.shape, self.w1.value.shape)
        return (x,)

    def forward(self, x, training=False, rng=None):
        z1 = nc.affine_forward(x, self.w1, self.b1)
        a1 = nc.activate(z1, "relu")
        d1, m1 = nc.dropout(a1, self.dropout[0], rng, training)
        z2 = nc.affine_forward(d1, self.w2, self.b2)
        a2 = nc.activate(z2, "relu")
        d2, m2 = nc.dropout(a2, self.dropout[1], rng, training)
        logits = nc.affine_forward(d2, self.w3, self.b3)
        return logits, (x, z1, a1, d1, m1, z2, a2, d2, m2)

    def backward(self, cache, dlogits):
        x, z1, a1, d1, m1, z2, a2, d2, m2 = cache
        dd2 = nc.affine_backward(dlogits, d2, self.w3, self.b3)
        da2 = nc.dropout_backward(dd2, m2, self.dropout[1])
        dz2 = nc.activate_backward(da2, "relu", z2, a2)
        dd1 = nc.affine_backward(dz2, d1, self.w2, self.b2)
        da1 = nc.dropout_backward(dd1, m1, self.dropout[0])
        dz1 = nc.activate_backward(da1, "relu", z1, a1)
        nc.affine_backward(dz1, x, self.w1, self.b1)


class Cnn1dClassifier:
    """Per-slice concept-axis convolutions with global max pooling.

    Each slice becomes a length-V sequence with d_emb channels (embedding +
    frequency); pooled outputs are concatenated across widths and slices,
    demographics appended, then a dense softmax head.
    """

    kind = "cnn"

    def __init__(self, cfg: EmbedConfig, rng: RngStream, filter_widths=(4, 8, 16, 32, 64),
                 channels=32):
        widths = tuple(sorted(filter_widths))
        if widths[-1] > cfg.v:
            raise SequenceTooShortError(cfg.v, widths[-1])
        self.cfg = cfg
        self.filter_widths = widths
        self.channels = channels
        d = cfg.d_emb - 1
        self.embedding = nc.embedding_uniform(rng.child(0), cfg.v, d, "embedding")
        self.kernels = {}
        self.biases = {}
        for j, k in enumerate(widths):
            self.kernels[k] = nc.glorot_uniform(rng.child(1, j), k * cfg.d_emb, channels, f"conv{k}_w")
            self.biases[k] = Param(np.zeros((1, channels)), f"conv{k}_b")
        pooled_width = cfg.t * len(widths) * channels + DEMOGRAPHIC_WIDTH
        self.head_w = nc.glorot_uniform(rng.child(2), pooled_width, 2, "head_w")
        self.head_b = Param(np.zeros((1, 2)), "head_b")

    def params(self):
        out = [self.embedding]
        for k in self.filter_widths:
            out += [self.kernels[k], self.biases[k]]
        return out + [self.head_w, self.head_b]

    def prepare(self, tensor: SliceTensor):
        _check_tensor(tensor, self.cfg.v, self.cfg.t)
        return tensor.counts, tensor.demographics

    def _slice_seq(self, counts_t):
        b, v = counts_t.shape
        d = self.cfg.d_emb
        seq = np.empty((b, v, d))
        seq[:, :, : d - 1] = self.embedding.value[None, :, :]
        seq[:, :, d - 1] = counts_t
        return seq

    def forward(self, counts, demo, training=False, rng=None):
        parts = []
        caches = []
        for t in range(self.cfg.t):
            seq = self._slice_seq(counts[:, t, :])
            pooled, cache = nc.conv_pool_forward(seq, self.kernels, self.biases)
            parts.append(pooled)
            caches.append(cache)
        features = np.concatenate(parts + [demo], axis=1)
        logits = nc.affine_forward(features, self.head_w, self.head_b)
        return logits, (caches, features)

    def backward(self, cache, dlogits):
        caches, features = cache
        dfeat = nc.affine_backward(dlogits, features, self.head_w, self.head_b)
        per_slice = len(self.filter_widths) * self.channels
        d = self.cfg.d_emb
        for t in range(self.cfg.t):
            dpooled = dfeat[:, t * per_slice:(t + 1) * per_slice]
            dseq = nc.conv_pool_backward(dpooled, caches[t], self.kernels, self.biases)
            self.embedding.grad += dseq[:, :, : d - 1].sum(axis=0)


class EmbeddingMLP:
    """The LSTM's input construction with the recurrence replaced by two
    fully connected relu layers over the concatenated step vectors."""

    kind = "embmlp"

    def __init__(self, cfg: EmbedConfig, rng: RngStream, input_dropout=0.2):
        self.cfg = cfg
        self.input_dropout = input_dropout
        d = cfg.d_emb - 1
        self.embedding = nc.embedding_uniform(rng.child(0), cfg.v, d, "embedding")
        full = cfg.t * cfg.input_width
        self.w1 = nc.glorot_uniform(rng.child(1), full, cfg.h, "fc1_w")
        self.b1 = Param(np.zeros((1, cfg.h)), "fc1_b")
        self.w2 = nc.glorot_uniform(rng.child(2), cfg.h, cfg.h, "fc2_w")
        self.b2 = Param(np.zeros((1, cfg.h)), "fc2_b")
        self.head_w = nc.glorot_uniform(rng.child(3), cfg.h, 2, "head_w")
        self.head_b = Param(np.zeros((1, 2)), "head_b")

    def params(self):
        return [self.embedding, self.w1, self.b1, self.w2, self.b2, self.head_w, self.head_b]

    def prepare(self, tensor: SliceTensor):
        _check_tensor(tensor, self.cfg.v, self.cfg.t)
        return tensor.counts, tensor.demographics

    def forward(self, counts, demo, training=False, rng=None):
        cfg = self.cfg
        xs, masks = [], []
        for t in range(cfg.t):
            x = build_input_sequence(counts[:, t, :], demo, self.embedding.value)
            x, mask = nc.dropout(x, self.input_dropout, rng, training) if training else (x, None)
            xs.append(x)
            masks.append(mask)
        full = np.concatenate(xs, axis=1)
        z1 = nc.affine_forward(full, self.w1, self.b1)
        a1 = nc.activate(z1, "relu")
        z2 = nc.affine_forward(a1, self.w2, self.b2)
        a2 = nc.activate(z2, "relu")
        logits = nc.affine_forward(a2, self.head_w, self.head_b)
        return logits, (masks, full, z1, a1, z2, a2)

    def backward(self, cache, dlogits):
        masks, full, z1, a1, z2, a2 = cache
        cfg = self.cfg
        da2 = nc.affine_backward(dlogits, a2, self.head_w, self.head_b)
        dz2 = nc.activate_backward(da2, "relu", z2, a2)
        da1 = nc.affine_backward(dz2, a1, self.w2, self.b2)
        dz1 = nc.activate_backward(da1, "relu", z1, a1)
        dfull = nc.affine_backward(dz1, full, self.w1, self.b1)
        width = cfg.input_width
        for t in range(cfg.t):
            dx = dfull[:, t * width:(t + 1) * width]
            dx = nc.dropout_backward(dx, masks[t], self.input_dropout)
            self.embedding.grad += input_sequence_embedding_grad(dx, cfg.v, cfg.d_emb)
