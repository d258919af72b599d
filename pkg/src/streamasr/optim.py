"""Gradient descent with momentum and global gradient-norm clipping."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .numerics import Tensor


class MomentumSGD:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.05, momentum: float = 0.9, clip_norm: float = 5.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in self.params if p.grad is not None)))

    def step(self, scale: float = 1.0) -> float:
        """Apply one update from accumulated grads (multiplied by ``scale``); returns the pre-clip norm."""
        norm = self.grad_norm() * scale
        factor = scale
        if self.clip_norm and norm > self.clip_norm:
            factor *= self.clip_norm / norm
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                v *= self.momentum
            else:
                v *= self.momentum
                v -= self.lr * factor * p.grad
            p.data += v
        return norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
