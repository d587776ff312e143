from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def numerical_grad(fn: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-4) -> np.ndarray:
    """Central differences of ``fn`` at ``point``, one coordinate at a time."""
    x = point.data
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn(point).item()
        flat[i] = orig - eps
        fm = fn(point).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def analytic_grad(fn: Callable[[Tensor], Tensor], point: Tensor) -> np.ndarray:
    point.requires_grad = True
    point.grad = None
    with Tape() as tape:
        out = fn(point)
    backward(out, tape)
    g = point.grad if point.grad is not None else np.zeros_like(point.data)
    point.grad = None
    return g


def grad_check(fn: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-6) -> float:
    """Relative error ``|a - n| / max(|a|, |n|)`` (Euclidean norms) between the
    tape gradient ``a`` and central differences ``n``.

    ``point`` must be float64. Returns 0 when both gradients vanish.
    """
    if point.dtype != np.float64:
        raise TypeError("grad_check requires a float64 point")
    a = analytic_grad(fn, point)
    n = numerical_grad(fn, point, eps)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)
