"""Adam optimizer and global gradient-norm clipping."""

from __future__ import annotations

import numpy as np

from .tensor import AutodiffError, Tensor


class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One in-place Adam update over every named parameter."""
    state.t += 1
    b1, b2, eps, t = state.beta1, state.beta2, state.eps, state.t
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        g = g.data if isinstance(g, Tensor) else g
        if g.shape != p.data.shape:
            raise AutodiffError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape} for {k!r}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        g = g.data if isinstance(g, Tensor) else g
        total += float(np.dot(g.ravel(), g.ravel()))
    return float(np.sqrt(total))


def clip_grads_(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(grads)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for k, g in grads.items():
            arr = g.data if isinstance(g, Tensor) else g
            arr *= factor
    return norm
