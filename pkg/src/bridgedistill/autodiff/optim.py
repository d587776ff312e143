from __future__ import annotations

from typing import Iterable

from .tensor import Tensor


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """Plain SGD: ``w <- w - lr * grad``, then clear the gradient."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p in params:
        if p.grad is not None:
            p.data -= p.data.dtype.type(lr) * p.grad.astype(p.data.dtype, copy=False)
        p.grad = None
