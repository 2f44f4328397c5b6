"""Adam with optional global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def global_norm(grads: dict[Tensor, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_by_global_norm(grads: dict[Tensor, np.ndarray],
                        max_norm: float) -> tuple[dict[Tensor, np.ndarray], float]:
    """Scale all gradients so their joint norm is at most max_norm."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {p: g * scale for p, g in grads.items()}
    return grads, norm


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p: np.zeros_like(p.data) for p in self.params}
        self.v = {p: np.zeros_like(p.data) for p in self.params}

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            g = grads[p]
            self.m[p] = b1 * self.m[p] + (1 - b1) * g
            self.v[p] = b2 * self.v[p] + (1 - b2) * g * g
            m_hat = self.m[p] / (1 - b1 ** self.t)
            v_hat = self.v[p] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
