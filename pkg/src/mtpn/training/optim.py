"""Optimisers over a named parameter map; state survives freezing."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.state: dict[str, tuple] = {}

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            p = params[name]
            m, v, t = self.state.get(name, (np.zeros_like(p), np.zeros_like(p), 0))
            t += 1
            m = self.b1 * m + (1 - self.b1) * g
            v = self.b2 * v + (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**t)
            vhat = v / (1 - self.b2**t)
            params[name] = (p - self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)
            self.state[name] = (m, v, t)


class SGDMomentum:
    def __init__(self, lr=1e-2, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.state: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            p = params[name]
            v = self.momentum * self.state.get(name, np.zeros_like(p)) + g
            params[name] = (p - self.lr * v).astype(p.dtype)
            self.state[name] = v


OPTIMIZERS = {"adam": Adam, "sgd_momentum": SGDMomentum}


def make_optimizer(name: str, lr: float):
    try:
        return OPTIMIZERS[name](lr=lr)
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}; expected one of {sorted(OPTIMIZERS)}") from None
