"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from .gradcheck import analytic_grad, grad_check, numerical_grad
from .ops import (
    add,
    batchnorm,
    concat,
    conv2d,
    flatten,
    fully_connected,
    global_avg_pool,
    maxpool2d,
    one_hot,
    relu,
    scale,
    soft_cross_entropy,
    softmax_t,
    sum_all,
    sum_squared_error,
)
from .optim import sgd_step
from .tensor import Node, Parameter, ShapeError, Tape, Tensor, active_tape, backward

__all__ = [
    "Node", "Parameter", "ShapeError", "Tape", "Tensor", "active_tape", "add",
    "analytic_grad", "backward", "batchnorm", "concat", "conv2d", "flatten",
    "fully_connected", "global_avg_pool", "grad_check", "maxpool2d", "numerical_grad",
    "one_hot", "relu", "scale", "sgd_step", "soft_cross_entropy", "softmax_t", "sum_all",
    "sum_squared_error",
]
