"""Plain gradient descent with momentum and global-norm gradient clipping."""

from __future__ import annotations

import numpy as np


class MomentumSGD:
    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float = 0.9,
                 grad_clip: float = 1.0):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0,1)")
        self.lr = lr
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if self.grad_clip > 0:
            total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
            if total > self.grad_clip:
                scale = self.grad_clip / total
                grads = {k: g * scale for k, g in grads.items()}
        for k, g in grads.items():
            v = self.velocity[k]
            v *= self.momentum
            v += g
            params[k] -= self.lr * v
