"""Differentiable ops. Images use NHWC layout, weights for conv are (kh, kw, C, F)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor

CE_EPS = 1e-7


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _shape_error(op: str, a, b) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.shape, b.shape) from None
    return Tensor.from_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a.shape, b.shape) from None
    return Tensor.from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul",
    )


def total(a: Tensor) -> Tensor:
    return Tensor.from_op(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    return Tensor.from_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise _shape_error("dense", x.shape, w.shape)

    def backward(g):
        return (g @ w.data.T if x.requires_grad else None), x.data.T @ g, g.sum(axis=0)

    return Tensor.from_op(x.data @ w.data + b.data, (x, w, b), backward, "dense")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log(x: Tensor) -> Tensor:
    return Tensor.from_op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(x.shape) for x in xs)) from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(out, xs, backward, "concat")


def _window(a: np.ndarray, i: int, j: int, ho: int, wo: int, stride: int) -> np.ndarray:
    return a[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid-padding 2D cross-correlation via im2col.

    Columns are laid out as (kh, kw, C) so the weight reshapes without a
    transpose; each kernel offset is one strided slice copy.
    """
    x = as_tensor(x)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2]:
        raise _shape_error("conv2d", x.shape, w.shape)
    n, h, wd, c = x.shape
    kh, kw, _, f = w.shape
    if h < kh or wd < kw or stride < 1:
        raise _shape_error("conv2d", x.shape, w.shape)
    ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    cols = np.empty((n, ho, wo, kh, kw, c))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = _window(x.data, i, j, ho, wo, stride)
    cols = cols.reshape(n * ho * wo, kh * kw * c)
    wmat = w.data.reshape(kh * kw * c, f)
    out = (cols @ wmat + b.data).reshape(n, ho, wo, f)

    def backward(g):
        g2 = g.reshape(-1, f)
        dw = (cols.T @ g2).reshape(kh, kw, c, f)
        db = g2.sum(axis=0)
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, c)
            dx = np.zeros(x.shape)
            for i in range(kh):
                for j in range(kw):
                    _window(dx, i, j, ho, wo, stride)[...] += dcols[:, :, :, i, j, :]
        return dx, dw, db

    return Tensor.from_op(out, (x, w, b), backward, "conv2d")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; an odd trailing row/column is dropped."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2: expected NHWC input, got shape {x.shape}")
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeError(f"maxpool2: input {x.shape} too small")
    blocks = x.data[:, :2 * h2, :2 * w2].reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros(blocks.shape)
        np.put_along_axis(onehot, idx[..., None], g[..., None], axis=-1)
        dx = np.zeros(x.shape)
        dx[:, :2 * h2, :2 * w2] = (
            onehot.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
        )
        return (dx,)

    return Tensor.from_op(out, (x,), backward, "maxpool2")


def _segments(counts: Sequence[int]) -> np.ndarray:
    return np.repeat(np.arange(len(counts)), counts)


def mean_over_set(x: Tensor, counts: Sequence[int]) -> Tensor:
    """Mean of consecutive row blocks of ``x``; empty blocks give zero rows.

    Each column is sorted before summing, so the result is bit-identical
    under any reordering of the rows inside a block.
    """
    counts = [int(k) for k in counts]
    if sum(counts) != x.shape[0]:
        raise ShapeError(f"mean_over_set: counts sum to {sum(counts)} but input has shape {x.shape}")
    d = x.shape[1]
    out = np.zeros((len(counts), d))
    starts = np.concatenate([[0], np.cumsum(counts)])
    for t, k in enumerate(counts):
        if k:
            out[t] = np.sort(x.data[starts[t]:starts[t + 1]], axis=0).sum(axis=0) / k

    def backward(g):
        scale = np.array([1.0 / k if k else 0.0 for k in counts])
        return (np.repeat(g * scale[:, None], counts, axis=0),)

    return Tensor.from_op(out, (x,), backward, "mean_over_set")


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        dx = np.zeros(x.shape)
        np.add.at(dx, index, g)
        return (dx,)

    return Tensor.from_op(x.data[index], (x,), backward, "gather_rows")


def dot_product_attention(q: Tensor, k: Tensor, v: Tensor, q_counts: Sequence[int] | None = None,
                          kv_counts: Sequence[int] | None = None) -> Tensor:
    """softmax(q k^T / sqrt(dim)) v, restricted to matching set blocks.

    With counts given, query block ``t`` only attends to key block ``t``.
    Queries whose key block is empty return zeros.
    """
    if q.data.ndim != 2 or k.data.ndim != 2 or q.shape[1] != k.shape[1]:
        raise _shape_error("dot_product_attention(q, k)", q.shape, k.shape)
    if v.data.ndim != 2 or v.shape[0] != k.shape[0]:
        raise _shape_error("dot_product_attention(k, v)", k.shape, v.shape)
    scale = 1.0 / np.sqrt(q.shape[1])
    scores = q.data @ k.data.T * scale
    if q_counts is not None:
        mask = _segments(q_counts)[:, None] == _segments(kv_counts)[None, :]
    else:
        mask = np.ones(scores.shape, dtype=bool)
    has_keys = mask.any(axis=1, keepdims=True)
    shifted = np.where(mask, scores - np.where(mask, scores, -np.inf).max(axis=1, keepdims=True, initial=-np.inf), 0.0)
    shifted = np.where(has_keys, shifted, 0.0)
    e = np.where(mask, np.exp(shifted), 0.0)
    weights = e / np.where(has_keys, e.sum(axis=1, keepdims=True), 1.0)
    out = weights @ v.data

    def backward(g):
        dv = weights.T @ g
        dw = g @ v.data.T
        ds = weights * (dw - (dw * weights).sum(axis=1, keepdims=True))
        return ds @ k.data * scale, ds.T @ q.data * scale, dv

    return Tensor.from_op(out, (q, k, v), backward, "attention")


def binary_cross_entropy(p: Tensor, y, eps: float = CE_EPS) -> Tensor:
    """Mean of -[y log p + (1 - y) log(1 - p)] with p clamped to [eps, 1 - eps]."""
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    clamped = np.clip(p.data, eps, 1.0 - eps)
    loss = -(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped))
    n = loss.size
    inside = (p.data > eps) & (p.data < 1.0 - eps)

    def backward(g):
        return (g * inside * (-(y / clamped) + (1.0 - y) / (1.0 - clamped)) / n,)

    return Tensor.from_op(np.asarray(loss.mean()), (p,), backward, "bce")
