"""Adam optimizer with bias correction, over named parameter dicts."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Var

__all__ = ["Adam", "global_grad_norm", "clip_grad_norm"]


class Adam:
    """Standard Adam; moment buffers mirror the parameters by name."""

    def __init__(self, params: dict[str, Var], lr: float = 3e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self) -> None:
        """Apply one bias-corrected update from the gradients on the params."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad_value()
            if g.shape != p.data.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != param {p.data.shape}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def global_grad_norm(params: dict[str, Var]) -> float:
    total = 0.0
    for p in params.values():
        g = p.grad_value()
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_grad_norm(params: dict[str, Var], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            p.grad *= scale
    return norm
