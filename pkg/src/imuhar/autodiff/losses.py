from __future__ import annotations

import numpy as np

from .tensor import Tensor, _result


def cross_entropy_loss(logits: Tensor, targets, n_classes: int | None = None) -> Tensor:
    """Mean negative log-softmax probability of each row's target class.

    ``logits`` is (n, C); ``targets`` holds n integer labels in [0, C).
    """
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy_loss: logits must be (n, C), got {logits.shape}")
    n, C = logits.shape
    if n_classes is not None and C != n_classes:
        raise ValueError(f"cross_entropy_loss: expected {n_classes} classes, logits have {C}")
    y = np.asarray(targets)
    if y.shape != (n,):
        raise ValueError(f"cross_entropy_loss: {y.shape[0] if y.ndim else 0} targets for {n} rows")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("cross_entropy_loss: targets must be integers")
        y = y.astype(np.int64)
    if n and (y.min() < 0 or y.max() >= C):
        raise ValueError(f"cross_entropy_loss: label out of range [0, {C}): {y.min()}..{y.max()}")
    if n == 0:
        raise ValueError("cross_entropy_loss: empty batch")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, y])

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[rows, y] -= 1.0
        return (p * (g / n),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
