"""Deterministic dense linear algebra with exact analytic backward passes.

All arithmetic is float64. Matrix products go through np.einsum, whose
reduction order is fixed and independent of how many rows are in the batch,
so any forward pass is bit-identical under batch repartitioning and every
run with the same seed reproduces byte-identical parameters.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DimensionError,
    InvalidLabelError,
    InvalidRateError,
    NonFiniteGradientError,
    SequenceTooShortError,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def dot(a, b):
    """a @ b with a batch-size-independent reduction order."""
    return np.einsum("ij,jk->ik", a, b)


def dot_at(a, b):
    """a.T @ b."""
    return np.einsum("ij,ik->jk", a, b)


def dot_bt(a, b):
    """a @ b.T."""
    return np.einsum("ij,kj->ik", a, b)


class RngStream:
    """Counter-tracked random stream; (seed, path) fully determines the draws.

    Child streams are derived through SeedSequence spawn keys, so independent
    pipeline stages can draw without perturbing each other.
    """

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self.draws = 0
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.path))
        )

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(ids))

    def uniform(self, low=0.0, high=1.0, size=None):
        self.draws += 1
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.draws += 1
        return self._gen.normal(loc, scale, size)

    def poisson(self, lam, size=None):
        self.draws += 1
        return self._gen.poisson(lam, size)

    def integers(self, low, high, size=None):
        self.draws += 1
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        self.draws += 1
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        self.draws += 1
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path}, draws={self.draws})"


class Param:
    """A trainable matrix with its gradient and Adam state.

    All four arrays share one shape; grad is zeroed by adam_step after each
    update so gradients always accumulate from a clean slate.
    """

    __slots__ = ("name", "value", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, value, name=""):
        v = np.array(value, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionError("Param value must be 2-D", v.shape, v.shape)
        self.name = name
        self.value = v
        self.grad = np.zeros_like(v)
        self.adam_m = np.zeros_like(v)
        self.adam_v = np.zeros_like(v)
        self.step_count = 0

    @classmethod
    def zeros(cls, rows, cols, name=""):
        return cls(np.zeros((rows, cols)), name=name)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def glorot_uniform(rng: RngStream, rows, cols, name=""):
    limit = np.sqrt(6.0 / (rows + cols))
    return Param(rng.uniform(-limit, limit, (rows, cols)), name=name)


def embedding_uniform(rng: RngStream, rows, cols, name=""):
    return Param(rng.uniform(-0.05, 0.05, (rows, cols)), name=name)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def affine_forward(x, w: Param, b: Param):
    """out = x @ W + b, bias broadcast over rows."""
    if x.shape[1] != w.value.shape[0]:
        raise DimensionError("affine input/weight", x.shape, w.value.shape)
    if b.value.shape != (1, w.value.shape[1]):
        raise DimensionError("affine weight/bias", w.value.shape, b.value.shape)
    return dot(x, w.value) + b.value


def affine_backward(dout, x, w: Param, b: Param):
    """Accumulates dL/dW and dL/db into the params; returns dL/dx."""
    w.grad += dot_at(x, dout)
    b.grad += dout.sum(axis=0, keepdims=True)
    return dot_bt(dout, w.value)


def sigmoid(x):
    """Branch-stable logistic; no overflow for |x| <= 700."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(x, kind):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise ValueError(f"unknown activation kind {kind!r}")


def activate_backward(dout, kind, x, out):
    """Exact derivative through the activation; x is the input, out the output."""
    if kind == "sigmoid":
        return dout * out * (1.0 - out)
    if kind == "tanh":
        return dout * (1.0 - out * out)
    if kind == "relu":
        return dout * (x > 0)
    raise ValueError(f"unknown activation kind {kind!r}")


def softmax_probs(logits):
    """Row-wise softmax via max-subtracted log-sum-exp."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of the labels and its gradient.

    Returns (loss, dL/dlogits) where the gradient already carries the 1/B
    factor, so downstream backward passes see the final mean-loss gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError("logits/labels", logits.shape, labels.shape)
    if labels.min() < 0 or labels.max() >= k:
        raise InvalidLabelError(f"labels must lie in [0, {k}), got {sorted(set(labels.tolist()))}")
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + m
    logp = logits - lse
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def dropout(x, rate, rng: RngStream, training):
    """Inverted dropout; eval mode is the identity.

    Returns (out, mask); mask is None when nothing was dropped.
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidRateError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    mask = rng.uniform(size=x.shape) >= rate
    return x * mask / (1.0 - rate), mask


def dropout_backward(dout, mask, rate):
    if mask is None:
        return dout
    return dout * mask / (1.0 - rate)


def adam_step(p: Param, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One Adam update with bias correction; zeroes the gradient afterwards."""
    if not np.isfinite(p.grad).all():
        raise NonFiniteGradientError(p.name or "<unnamed>")
    g = p.grad
    p.step_count += 1
    t = p.step_count
    p.adam_m *= beta1
    p.adam_m += (1.0 - beta1) * g
    p.adam_v *= beta2
    p.adam_v += (1.0 - beta2) * (g * g)
    m_hat = p.adam_m / (1.0 - beta1 ** t)
    v_hat = p.adam_v / (1.0 - beta2 ** t)
    p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    p.zero_grad()


# ---------------------------------------------------------------------------
# 1-D convolution with global max pooling
# ---------------------------------------------------------------------------

def conv_pool_forward(seqs, kernels, biases):
    """Valid cross-correlation + per-channel global max pool over a batch.

    seqs: (B, L, C). kernels maps filter width k to a Param of shape
    (k*C, F_k); biases maps the same widths to (1, F_k) Params (or None).
    Pooled outputs are concatenated over ascending widths: (B, sum F_k).
    """
    b_n, length, channels = seqs.shape
    pooled_parts = []
    cache = {"seqs_shape": seqs.shape, "widths": sorted(kernels), "per_width": {}}
    for k in sorted(kernels):
        w = kernels[k]
        if length < k:
            raise SequenceTooShortError(length, k)
        if w.value.shape[0] != k * channels:
            raise DimensionError(f"conv width {k} kernel", (k * channels,), w.value.shape)
        positions = length - k + 1
        win = np.lib.stride_tricks.sliding_window_view(seqs, k, axis=1)
        # sliding view is (B, P, C, k); kernel layout is position-major, channel-minor
        win2d = win.transpose(0, 1, 3, 2).reshape(b_n * positions, k * channels)
        conv = dot(win2d, w.value)
        bias = biases.get(k) if biases else None
        if bias is not None:
            conv = conv + bias.value
        conv = conv.reshape(b_n, positions, w.value.shape[1])
        argmax = conv.argmax(axis=1)  # first max on ties
        pooled = np.take_along_axis(conv, argmax[:, None, :], axis=1)[:, 0, :]
        pooled_parts.append(pooled)
        cache["per_width"][k] = (win2d, argmax, positions)
    return np.concatenate(pooled_parts, axis=1), cache


def conv_pool_backward(dpooled, cache, kernels, biases):
    """Routes pooled gradients to the argmax positions; returns dL/dseqs."""
    b_n, length, channels = cache["seqs_shape"]
    dseqs = np.zeros((b_n, length, channels))
    col = 0
    for k in cache["widths"]:
        w = kernels[k]
        win2d, argmax, positions = cache["per_width"][k]
        f_k = w.value.shape[1]
        dpart = dpooled[:, col:col + f_k]
        col += f_k
        dconv = np.zeros((b_n, positions, f_k))
        np.put_along_axis(dconv, argmax[:, None, :], dpart[:, None, :], axis=1)
        dconv2 = dconv.reshape(b_n * positions, f_k)
        w.grad += dot_at(win2d, dconv2)
        bias = biases.get(k) if biases else None
        if bias is not None:
            bias.grad += dconv2.sum(axis=0, keepdims=True)
        dwin = dot_bt(dconv2, w.value).reshape(b_n, positions, k, channels)
        for j in range(k):
            dseqs[:, j:j + positions, :] += dwin[:, :, j, :]
    return dseqs


def conv1d_maxpool(seq, kernels, biases=None):
    """Single-sequence convenience wrapper: seq is (L, C); returns (vector, cache)."""
    pooled, cache = conv_pool_forward(seq[None, :, :], kernels, biases or {})
    return pooled[0], cache


def conv1d_maxpool_backward(dpooled, cache, kernels, biases=None):
    return conv_pool_backward(dpooled[None, :], cache, kernels, biases or {})[0]


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(f, params, h=1e-5):
    """Max relative error between analytic gradients and central differences.

    f() must return the scalar loss and accumulate gradients into each
    param's .grad. Gradients are zeroed here before the analytic pass; the
    numeric passes ignore whatever f writes into .grad. f must be
    deterministic (freeze any dropout masks).
    """
    for p in params:
        p.zero_grad()
    f()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ag in zip(params, analytic):
        flat_v = p.value.reshape(-1)
        flat_g = ag.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + h
            up = float(f())
            flat_v[i] = orig - h
            down = float(f())
            flat_v[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = flat_g[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
