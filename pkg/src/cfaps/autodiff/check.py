"""Finite-difference gradient verification."""

from __future__ import annotations

import numpy as np

from .tensor import Graph, Tensor, backward


def finite_difference_check(f, params: dict[str, Tensor], step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f(params) -> scalar Tensor` must be deterministic for fixed params.
    Error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    with Graph() as g:
        loss = f(params)
        grads = backward(g, loss, leaves=params.values())

    worst = 0.0
    for name, p in params.items():
        analytic = grads[p].data
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f(params).item()
            flat[i] = orig - step
            down = f(params).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic.ravel()[i]
            err = abs(a - numeric) / max(1.0, abs(a))
            if err > worst:
                worst = err
    return worst
