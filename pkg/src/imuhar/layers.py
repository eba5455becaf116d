"""Parameter-owning building blocks shared by encoders and time-series heads."""
from __future__ import annotations

import numpy as np

from .autodiff import ParamStore, Tensor, conv1d, conv2d, fan_in_uniform, fully_connected


class Module:
    """Registers parameters under ``prefix`` in a (possibly shared) ParamStore.

    Weights are fan-in scaled uniform draws seeded by (seed, full name);
    biases start at zero.
    """

    def __init__(self, store: ParamStore | None, prefix: str, seed: int, dtype=np.float64):
        self.store = store if store is not None else ParamStore(dtype)
        self.prefix = prefix
        self.seed = int(seed)

    def weight(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        full = f"{self.prefix}.{name}"
        return self.store.add(full, fan_in_uniform(self.seed, full, shape, fan_in))

    def bias(self, name: str, size: int) -> Tensor:
        return self.store.add(f"{self.prefix}.{name}", np.zeros(size))

    def param_count(self) -> int:
        return self.store.count(self.prefix + ".")


class Dense(Module):
    def __init__(self, store, prefix, seed, d_in: int, d_out: int):
        super().__init__(store, prefix, seed)
        self.W = self.weight("W", (d_in, d_out), d_in)
        self.b = self.bias("b", d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return fully_connected(x, self.W, self.b)


class Conv1d(Module):
    def __init__(self, store, prefix, seed, c_in: int, c_out: int, k: int, stride: int = 1, dilation: int = 1, padding: str = "same"):
        super().__init__(store, prefix, seed)
        self.W = self.weight("W", (c_out, c_in, k), c_in * k)
        self.b = self.bias("b", c_out)
        self.stride, self.dilation, self.padding = stride, dilation, padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.W, self.b, stride=self.stride, dilation=self.dilation, padding=self.padding)


class Conv2d(Module):
    def __init__(self, store, prefix, seed, c_in: int, c_out: int, kernel: tuple[int, int], stride: tuple[int, int]):
        super().__init__(store, prefix, seed)
        kh, kt = kernel
        self.W = self.weight("W", (c_out, c_in, kh, kt), c_in * kh * kt)
        self.b = self.bias("b", c_out)
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.W, self.b, stride=self.stride)
