"""Named parameter tensors and normalisation buffers."""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from .tensor import BatchNormStats, Tensor


class ParameterStore:
    """Ordered mapping of learnable tensors plus non-learnable buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> None:
        self.buffers[name] = np.array(value, dtype=self.dtype)

    def add_batchnorm(self, prefix: str, dim: int) -> None:
        self.add(f"{prefix}.gamma", np.ones(dim))
        self.add(f"{prefix}.beta", np.zeros(dim))
        self.add_buffer(f"{prefix}.running_mean", np.zeros(dim))
        self.add_buffer(f"{prefix}.running_var", np.ones(dim))

    def bn_stats(self, prefix: str) -> BatchNormStats:
        return BatchNormStats(self.buffers[f"{prefix}.running_mean"], self.buffers[f"{prefix}.running_var"])

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_values(self) -> int:
        return int(np.sum([p.size for p in self.params.values()]))

    def copy(self, dtype=None) -> "ParameterStore":
        out = ParameterStore(self.dtype if dtype is None else dtype)
        for name, p in self.params.items():
            out.add(name, p.data)
        for name, b in self.buffers.items():
            out.add_buffer(name, b)
        return out


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
