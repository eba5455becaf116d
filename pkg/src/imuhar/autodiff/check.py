"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    seed: int = 0,
    max_entries: int | None = None,
) -> float:
    """Worst relative error between analytic and numeric gradients of a random projection.

    ``fn(*inputs)`` may return any shape; the scalar checked is
    ``sum(fn(*inputs) * w)`` for a fixed random ``w``. When ``max_entries`` is
    set, only that many randomly chosen coordinates per input are perturbed.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    w = rng.standard_normal(out.shape)

    def scalar() -> float:
        return float(np.sum(fn(*inputs).data * w))

    (out * Tensor(w)).sum().backward()
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else np.array(t.grad)
        if max_entries is None or t.data.size <= max_entries:
            numeric = numeric_grad(scalar, t.data, eps)
            worst = max(worst, rel_error(analytic, numeric))
        else:
            idx = rng.choice(t.data.size, size=max_entries, replace=False)
            flat = t.data.reshape(-1)
            num = np.empty(max_entries)
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + eps
                fp = scalar()
                flat[i] = old - eps
                fm = scalar()
                flat[i] = old
                num[j] = (fp - fm) / (2 * eps)
            worst = max(worst, rel_error(analytic.reshape(-1)[idx], num))
    return worst
