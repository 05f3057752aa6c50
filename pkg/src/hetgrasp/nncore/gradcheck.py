from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``t.data``."""
    out = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f().item()
        flat[i] = old - eps
        lo = f().item()
        flat[i] = old
        out.reshape(-1)[i] = (hi - lo) / (2 * eps)
    return out


def gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Largest relative error between autodiff and finite-difference gradients."""
    for t in inputs:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numeric_grad(f, t, eps)
        worst = max(worst, float(relative_error(analytic, numeric).max(initial=0.0)))
    return worst


def standard_cases(rng: np.random.Generator) -> list[tuple[str, Callable[[], Tensor], list[Tensor]]]:
    """One small randomized scalar-valued graph per op type.

    Each entry is (op name, closure computing a scalar, inputs to check).
    Inputs stay away from relu/maxpool kinks and from the loss clamp.
    """
    from . import ops
    from .tensor import parameter

    def p(*shape, lo=-1.0, hi=1.0):
        return parameter(rng.uniform(lo, hi, size=shape))

    w = Tensor(rng.normal(size=(3, 4)))  # fixed projection so every output element matters
    cases = []
    a, b = p(3, 4), p(1, 4)
    cases.append(("add", lambda: ((a + b) * w).sum(), [a, b]))
    a2 = p(3, 4)
    cases.append(("neg", lambda: ((-a2) * w).sum(), [a2]))
    m1, m2 = p(3, 4), p(3, 1)
    cases.append(("mul", lambda: (m1 * m2 * w).sum(), [m1, m2]))
    x, y = p(3, 5), p(5, 4)
    cases.append(("matmul", lambda: ((x @ y) * w).sum(), [x, y]))
    r = p(2, 6)
    cases.append(("reshape", lambda: (r.reshape(3, 4) * w).sum(), [r]))
    dx, dw, db = p(3, 5), p(5, 4), p(4)
    cases.append(("dense", lambda: (ops.dense(dx, dw, db) * w).sum(), [dx, dw, db]))
    rx = parameter(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4)))
    cases.append(("relu", lambda: (ops.relu(rx) * w).sum(), [rx]))
    sx = p(3, 4, lo=-3, hi=3)
    cases.append(("sigmoid", lambda: (ops.sigmoid(sx) * w).sum(), [sx]))
    lx = p(3, 4, lo=0.5, hi=2.0)
    cases.append(("log", lambda: (ops.log(lx) * w).sum(), [lx]))
    c1, c2 = p(3, 1), p(3, 3)
    cases.append(("concat", lambda: (ops.concat([c1, c2], axis=1) * w).sum(), [c1, c2]))
    cx, cw, cb = p(2, 7, 7, 2), p(3, 3, 2, 3), p(3)
    proj1 = Tensor(rng.normal(size=(2, 5, 5, 3)))
    cases.append(("conv2d", lambda: (ops.conv2d(cx, cw, cb) * proj1).sum(), [cx, cw, cb]))
    proj2 = Tensor(rng.normal(size=(2, 3, 3, 3)))
    cases.append(("conv2d_stride2", lambda: (ops.conv2d(cx, cw, cb, 2) * proj2).sum(), [cx, cw, cb]))
    px = parameter(rng.permutation(2 * 5 * 4 * 2).reshape(2, 5, 4, 2) * 0.1 + rng.uniform(0, 0.01, (2, 5, 4, 2)))
    proj3 = Tensor(rng.normal(size=(2, 2, 2, 2)))
    cases.append(("maxpool2", lambda: (ops.maxpool2(px) * proj3).sum(), [px]))
    ex = p(7, 4)
    proj4 = Tensor(rng.normal(size=(3, 4)))
    cases.append(("mean_over_set", lambda: (ops.mean_over_set(ex, [3, 0, 4]) * proj4).sum(), [ex]))
    gx = p(3, 4)
    proj5 = Tensor(rng.normal(size=(5, 4)))
    cases.append(("gather_rows", lambda: (ops.gather_rows(gx, np.array([0, 2, 2, 1, 0])) * proj5).sum(), [gx]))
    q, k, v = p(4, 3), p(5, 3), p(5, 2)
    proj6 = Tensor(rng.normal(size=(4, 2)))
    cases.append(("attention", lambda: (ops.dot_product_attention(q, k, v, [2, 2], [3, 2]) * proj6).sum(), [q, k, v]))
    bp = p(6, 1, lo=0.05, hi=0.95)
    labels = rng.integers(0, 2, size=(6, 1))
    cases.append(("binary_cross_entropy", lambda: ops.binary_cross_entropy(bp, labels), [bp]))
    return cases
