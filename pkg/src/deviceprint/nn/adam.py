"""Adam: bias-corrected exponential moving averages of the gradient and
its elementwise square."""

import numpy as np


class AdamState:
    """Per-parameter first/second moment buffers plus the step counter."""

    def __init__(self, store, alpha=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.value) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in store.items()}


def adam_step(store, state):
    """Apply one update to every parameter from its accumulated gradient."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in store.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad ** 2
        p.value -= state.alpha * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
