from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import ConfigError
from .tensor import Tensor


class Adam:
    """Adam over a named parameter table; moment buffers live here."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, grads: Mapping[str, np.ndarray] | None = None) -> None:
        """One update using ``grads`` if given, else each parameter's ``.grad``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k] if grads is not None else p.grad
            if g is None:
                g = np.zeros_like(p.data)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], optimizer: Adam) -> Mapping[str, Tensor]:
    optimizer.step(grads)
    return params
