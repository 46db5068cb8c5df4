"""Batch norm, activations, dense head, reshaping glue, and the
softmax cross-entropy loss."""

import numpy as np

from ..errors import DataError, LabelError, ShapeError
from .params import uniform_fanin


class BatchNorm3d:
    """Per-channel normalization over (batch, time, height, width).

    Train mode uses current-batch statistics and updates running estimates
    with the given momentum (fraction of the old value kept); inference
    mode normalizes with the running estimates.
    """

    def __init__(self, store, name, channels, eps=1e-5, momentum=0.9):
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def forward(self, x, train=False):
        if x.ndim != 5:
            raise ShapeError("batch norm expects a 5-D tensor")
        axes = (0, 2, 3, 4)
        if train:
            m = x.shape[0] * x.shape[2] * x.shape[3] * x.shape[4]
            if m < 2:
                raise DataError("train-mode batch norm needs >= 2 values "
                                "per channel")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (self.momentum * self.running_mean
                                 + (1 - self.momentum) * mean)
            self.running_var = (self.momentum * self.running_var
                                + (1 - self.momentum) * var)
        else:
            m = None
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(1, -1, 1, 1, 1)) * inv_std.reshape(1, -1, 1, 1, 1)
        self._cache = (xhat, inv_std, m, train)
        return self.gamma.value.reshape(1, -1, 1, 1, 1) * xhat \
            + self.beta.value.reshape(1, -1, 1, 1, 1)

    def backward(self, grad_out):
        xhat, inv_std, m, train = self._cache
        axes = (0, 2, 3, 4)
        self.gamma.grad += np.sum(grad_out * xhat, axis=axes)
        self.beta.grad += np.sum(grad_out, axis=axes)
        dxhat = grad_out * self.gamma.value.reshape(1, -1, 1, 1, 1)
        if not train:
            return dxhat * inv_std.reshape(1, -1, 1, 1, 1)
        sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
        return (inv_std.reshape(1, -1, 1, 1, 1) / m) * (
            m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad_out):
        return grad_out * self._mask


class FlattenPerStep:
    """[B, C, T, H, W] -> [B, T, C*H*W], keeping the time axis intact."""

    def __init__(self):
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape
        b, c, t, h, w = x.shape
        return x.transpose(0, 2, 1, 3, 4).reshape(b, t, c * h * w)

    def backward(self, grad_out):
        b, c, t, h, w = self._shape
        return grad_out.reshape(b, t, c, h, w).transpose(0, 2, 1, 3, 4)


class MeanOverTime:
    """[B, T, D] -> [B, D] by averaging the time axis."""

    def __init__(self):
        self._t = None

    def forward(self, x, train=False):
        self._t = x.shape[1]
        return x.mean(axis=1)

    def backward(self, grad_out):
        return np.repeat(grad_out[:, None, :], self._t, axis=1) / self._t


class Dense:
    def __init__(self, store, name, d_in, d_out, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = store.add(f"{name}.w", uniform_fanin(rng, (d_in, d_out), d_in))
        self.b = store.add(f"{name}.b", np.zeros(d_out))
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, grad_out):
        self.w.grad += self._x.T @ grad_out
        self.b.grad += grad_out.sum(axis=0)
        return grad_out @ self.w.value.T


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    labels must be one-hot rows matching the logits shape. The softmax is
    stabilized by subtracting the row max; the gradient is (S - y) / B.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape or logits.ndim != 2:
        raise LabelError("logits and one-hot labels must both be (B, K)")
    if (np.any((labels != 0.0) & (labels != 1.0))
            or np.any(np.abs(labels.sum(axis=1) - 1.0) > 1e-12)):
        raise LabelError("labels must be one-hot rows")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_probs = shifted - log_z
    batch = logits.shape[0]
    loss = float(-np.sum(labels * log_probs) / batch)
    grad = (np.exp(log_probs) - labels) / batch
    return loss, grad
