"""Adam with bias correction over named parameter dicts."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, TensorError


class AdamState:
    """Per-parameter first/second moment buffers plus a shared step count.

    Defaults follow the usual style-GAN training recipe: beta1=0 (no
    momentum), beta2=0.99.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.0, beta2: float = 0.99, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params: dict[str, Tensor], state: AdamState):
    """One in-place update from the ``.grad`` buffers; grads are cleared.

    Parameters with no accumulated gradient are treated as grad 0 (their
    moments still decay, keeping trajectories well-defined).
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in params:
        p = params[name]
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise TensorError(
                f"adam_step: grad shape {g.shape} != param shape "
                f"{p.data.shape} for '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
