"""Adam with decoupled weight decay and a step learning-rate schedule."""

from __future__ import annotations

from typing import Dict

import numpy as np

from ..params import ParameterStore


def lr_at(epoch: int, base_lr: float, decay: float, every: int) -> float:
    """Learning rate for ``epoch`` (0-based): ``base_lr * decay ** (epoch // every)``."""
    return base_lr * decay ** (epoch // every)


class Adam:
    """Adam moments with weight decay applied directly to the parameters.

    Parameters whose gradient is ``None`` (not reached by the loss) are left
    untouched, moments included.
    """

    def __init__(self, store: ParameterStore, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.store = store
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in store.items()}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in store.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p.data
            p.data -= lr * update
