from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named trainable tensors with Adam moment buffers and a shared step counter."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        p = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def count(self, prefix: str = "") -> int:
        """Exact number of scalar parameters (optionally under a name prefix)."""
        return int(sum(p.data.size for n, p in self.params.items() if n.startswith(prefix)))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load(self, values: dict[str, np.ndarray]):
        missing = set(self.params) - set(values)
        extra = set(values) - set(self.params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for n, p in self.params.items():
            if values[n].shape != p.data.shape:
                raise ValueError(f"{n}: shape {values[n].shape} != {p.data.shape}")
            p.data = np.array(values[n], dtype=self.dtype)

    def astype(self, dtype) -> None:
        self.dtype = np.dtype(dtype)
        for n, p in self.params.items():
            p.data = p.data.astype(self.dtype)
            self.m[n] = self.m[n].astype(self.dtype)
            self.v[n] = self.v[n].astype(self.dtype)


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Per-parameter generator keyed by name, so adding a layer never reshuffles others."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


def fan_in_uniform(seed: int, name: str, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(3.0 / fan_in)
    return param_rng(seed, name).uniform(-bound, bound, size=shape)


def adam_step(store: ParamStore, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update on every parameter; clears gradients afterwards.

    A parameter without a gradient is treated as having a zero gradient.
    """
    store.t += 1
    t = store.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        if g is None:
            m *= beta1
            v *= beta2
        else:
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
