"""Scaled dot-product self-attention with Q = K = V = input.

No learned projections: attention weights are softmax(x x^T / sqrt(D))
row-wise over time, applied back to the input sequence.
"""

import numpy as np

from ..errors import ShapeError


def _attention_weights(x):
    d = x.shape[-1]
    scores = x @ x.transpose(0, 2, 1) / np.sqrt(d)
    scores -= scores.max(axis=-1, keepdims=True)
    expd = np.exp(scores)
    return expd / expd.sum(axis=-1, keepdims=True)


def self_attention(x):
    """Forward pass only; x is [B, T, D]."""
    out, _ = self_attention_forward(x)
    return out


def self_attention_forward(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] < 1:
        raise ShapeError("self-attention expects [B, T, D] with D >= 1")
    weights = _attention_weights(x)
    return weights @ x, (x, weights)


def self_attention_backward(grad_out, cache):
    x, weights = cache
    scale = 1.0 / np.sqrt(x.shape[-1])
    grad_v = weights.transpose(0, 2, 1) @ grad_out
    grad_w = grad_out @ x.transpose(0, 2, 1)
    # softmax backward, row-wise over the last axis
    grad_scores = weights * (grad_w - (grad_w * weights).sum(axis=-1, keepdims=True))
    grad_q = grad_scores @ x * scale
    grad_k = grad_scores.transpose(0, 2, 1) @ x * scale
    return grad_q + grad_k + grad_v


class SelfAttention:
    def __init__(self):
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = self_attention_forward(x)
        return out

    def backward(self, grad_out):
        return self_attention_backward(grad_out, self._cache)
