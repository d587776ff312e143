"""Differentiable primitives: the layers and losses the networks are built from.

Every function takes :class:`Tensor` operands, computes the forward value with
numpy and, when a tape is active, records a closure that maps the output
gradient to input gradients.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, record

LOG_CLAMP = 1e-12


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# structural ops
# --------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return record("scale", a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return record("sum", np.asarray(a.data.sum()), (a,),
                  lambda g: (np.broadcast_to(g, shape).astype(a.dtype),))


def flatten(x: Tensor) -> Tensor:
    shape = x.shape
    return record("flatten", x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),))


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return parts

    return record("concat", out, tuple(tensors), bw)


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW batch with square 1x1 or 3x3 kernels."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {ci}")
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d: kernel must be 1x1 or 3x3, got {kh}x{kw}")
    if bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} padding={padding}")
    k = kh
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d: input {h}x{w} with padding {padding} smaller than kernel {k}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    # kernel laid out as (O, k, k, C) to match NHWC patches
    w2 = weight.data.transpose(0, 2, 3, 1).reshape(o, -1)
    xh = x.data.transpose(0, 2, 3, 1)
    pointwise = k == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = np.ascontiguousarray(xh).reshape(-1, c)
    else:
        if padding:
            xp = np.zeros((n, h + 2 * padding, w + 2 * padding, c), dtype=x.dtype)
            xp[:, padding:padding + h, padding:padding + w] = xh
        else:
            xp = xh
        cols6 = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols6[:, :, :, i, j] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride]
        cols = cols6.reshape(n * ho * wo, k * k * c)
    y = cols @ w2.T
    y += bias.data
    out = np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        dw = None
        if weight.requires_grad:
            dw = np.ascontiguousarray((g2.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2))
        db = g2.sum(axis=0) if bias.requires_grad else None
        if not x.requires_grad:
            return None, dw, db
        dcols = g2 @ w2
        if pointwise:
            return np.ascontiguousarray(dcols.reshape(n, h, w, c).transpose(0, 3, 1, 2)), dw, db
        dcols = dcols.reshape(n, ho, wo, k, k, c)
        dxp = np.zeros((n, h + 2 * padding, w + 2 * padding, c), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, i, j]
        dx = dxp[:, padding:padding + h, padding:padding + w]
        return np.ascontiguousarray(dx.transpose(0, 3, 1, 2)), dw, db

    return record("conv2d", out, (x, weight, bias), bw)


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Max over k x k windows; gradient goes to the first maximal element."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if h < k or w < k or (h - k) % stride or (w - k) % stride:
        raise ShapeError(f"maxpool2d: {h}x{w} input does not tile with k={k}, stride={stride}")
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    views = [x.data[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
             for i in range(k) for j in range(k)]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)

    def bw(g):
        dx = np.zeros_like(x.data)
        taken = np.zeros(out.shape, dtype=bool)
        for idx, v in enumerate(views):
            i, j = divmod(idx, k)
            hit = (v == out) & ~taken
            taken |= hit
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * hit
        return (dx,)

    return record("maxpool2d", out, (x,), bw)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"fully_connected: expected 2-d operands, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"fully_connected: input dim {x.shape[1]} != weight in-dim {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"fully_connected: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T + bias.data

    def bw(g):
        dx = g @ weight.data if x.requires_grad else None
        dw = g.T @ x.data if weight.requires_grad else None
        db = g.sum(axis=0) if bias.requires_grad else None
        return dx, dw, db

    return record("fully_connected", out, (x, weight, bias), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", x.data * mask, (x,), lambda g: (g * mask,))


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str = "train",
              running_mean: np.ndarray | None = None, running_var: np.ndarray | None = None,
              eps: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Batch normalization over N (and H, W for 4-d input).

    In train mode the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.data.ndim not in (2, 4):
        raise ShapeError(f"batchnorm: expected N x d or NCHW input, got {x.shape}")
    ch = x.shape[1]
    if gamma.shape != (ch,) or beta.shape != (ch,):
        raise ShapeError(f"batchnorm: gamma/beta must have shape ({ch},)")
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = (1, ch) if x.data.ndim == 2 else (1, ch, 1, 1)
    g_ = gamma.data.reshape(bshape)
    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError("batchnorm: train mode needs at least 2 samples")
        m = x.data.size // ch
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        if running_mean is not None:
            running_mean *= momentum
            running_mean += (1 - momentum) * mu.reshape(ch)
        if running_var is not None:
            running_var *= momentum
            running_var += (1 - momentum) * var.reshape(ch) * (m / max(m - 1, 1))
        out = xhat * g_ + beta.data.reshape(bshape)

        def bw(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dx = (g_ * inv / m) * (m * g - dbeta.reshape(bshape) - xhat * dgamma.reshape(bshape))
            return dx, dgamma, dbeta

        return record("batchnorm", out, (x, gamma, beta), bw)
    if mode != "infer":
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    if running_mean is None or running_var is None:
        raise ValueError("batchnorm: infer mode requires running statistics")
    inv = (1.0 / np.sqrt(running_var + eps)).reshape(bshape).astype(x.dtype)
    xhat = (x.data - running_mean.reshape(bshape).astype(x.dtype)) * inv
    out = xhat * g_ + beta.data.reshape(bshape)

    def bw_inf(g):
        return g * g_ * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return record("batchnorm", out, (x, gamma, beta), bw_inf)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def bw(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),)

    return record("global_avg_pool", out, (x,), bw)


# --------------------------------------------------------------------------
# softmax and losses
# --------------------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_t(logits: Tensor, T: float = 1.0) -> Tensor:
    """Temperature softmax ``softmax(logits / T)`` over the last axis of an N x K batch."""
    if T <= 0:
        raise ValueError(f"softmax_t: temperature must be positive, got {T}")
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_t: expected N x K logits, got {logits.shape}")
    y = _softmax(logits.data / T)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)) / T,)

    return record("softmax_t", y, (logits,), bw)


def soft_cross_entropy(logits: Tensor, target_probs, T: float = 1.0) -> Tensor:
    """Batch-mean cross-entropy between target distributions and ``softmax(logits / T)``.

    Targets are constants; one-hot rows give the ordinary classification loss.
    """
    if T <= 0:
        raise ValueError(f"soft_cross_entropy: temperature must be positive, got {T}")
    t = target_probs.data if isinstance(target_probs, Tensor) else np.asarray(target_probs)
    if logits.data.ndim != 2 or t.shape != logits.shape:
        raise ShapeError(f"soft_cross_entropy: logits {logits.shape} vs targets {t.shape}")
    row = t.sum(axis=1)
    if not np.all(np.abs(row - 1.0) <= 1e-4):
        raise ValueError("soft_cross_entropy: target rows must sum to 1")
    n = logits.shape[0]
    p = _softmax(logits.data / T)
    loss = -(t * np.log(np.maximum(p, LOG_CLAMP))).sum() / n

    def bw(g):
        return ((p * row[:, None] - t) * (g / (T * n)),)

    return record("soft_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def one_hot(labels, k: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], k), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def sum_squared_error(a: Tensor, b) -> Tensor:
    """Batch mean of the per-row squared L2 distance."""
    b = _as_tensor(b)
    if a.shape != b.shape or a.data.ndim != 2:
        raise ShapeError(f"sum_squared_error: shapes {a.shape} and {b.shape} differ")
    n = a.shape[0]
    diff = a.data - b.data
    loss = (diff * diff).sum() / n

    def bw(g):
        da = diff * (2.0 * g / n)
        return da, (-da if b.requires_grad else None)

    return record("sum_squared_error", np.asarray(loss, dtype=a.dtype), (a, b), bw)
