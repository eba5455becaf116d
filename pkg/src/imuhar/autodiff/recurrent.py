"""GRU and LSTM cells composed from primitive ops, plus sequence unrolling.

Gradients through time come from the graph itself; no cell has a
hand-written backward.

GRU (Cho et al. form, reset applied before the recurrent product)::

    z = sigmoid(x Wz + h Uz + bz)        update gate
    r = sigmoid(x Wr + h Ur + br)        reset gate
    n = tanh(x Wn + (r * h) Un + bn)     candidate
    h' = (1 - z) * h + z * n

LSTM::

    i, f, o = sigmoid(.), g = tanh(.)     from x W + h U + b
    c' = f * c + i * g
    h' = o * tanh(c')
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, fully_connected, getitem, matmul, reshape, sigmoid, stack, tanh


def gru_cell(x_t: Tensor, h_prev: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """One GRU step. ``W`` (d, 3H), ``U`` (H, 3H), ``b`` (3H,), gate order z, r, n."""
    return _gru_step(fully_connected(x_t, W, b), h_prev, U)


def _gru_step(xp: Tensor, h: Tensor, U: Tensor) -> Tensor:
    H = h.shape[1]
    return _gru_step_split(xp, h, U[:, : 2 * H], U[:, 2 * H :])


def _gru_step_split(xp: Tensor, h: Tensor, U_zr: Tensor, U_n: Tensor) -> Tensor:
    H = h.shape[1]
    zr = sigmoid(xp[:, : 2 * H] + matmul(h, U_zr))
    z = zr[:, :H]
    r = zr[:, H:]
    n = tanh(xp[:, 2 * H :] + matmul(r * h, U_n))
    return h + z * (n - h)


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, W: Tensor, U: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step. ``W`` (d, 4H), ``U`` (H, 4H), ``b`` (4H,), gate order i, f, o, g."""
    return _lstm_step(fully_connected(x_t, W, b), h_prev, c_prev, U)


def _lstm_step(xp: Tensor, h: Tensor, c: Tensor, U: Tensor) -> tuple[Tensor, Tensor]:
    H = h.shape[1]
    pre = xp + matmul(h, U)
    ifo = sigmoid(pre[:, : 3 * H])
    g = tanh(pre[:, 3 * H :])
    c_new = ifo[:, H : 2 * H] * c + ifo[:, :H] * g
    h_new = ifo[:, 2 * H :] * tanh(c_new)
    return h_new, c_new


def _project(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    B, T, d = x.shape
    return reshape(fully_connected(reshape(x, (B * T, d)), W, b), (B, T, W.shape[1]))


def gru_sequence(x: Tensor, W: Tensor, U: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Run a GRU over ``x`` (B, T, d) from a zero state; returns (B, T, H)."""
    B, T, _ = x.shape
    H = U.shape[0]
    xp = _project(x, W, b)
    U_zr, U_n = U[:, : 2 * H], U[:, 2 * H :]
    h = Tensor(_zeros(x, B, H))
    outs: list[Tensor] = [None] * T  # type: ignore[list-item]
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        h = _gru_step_split(getitem(xp, (slice(None), t)), h, U_zr, U_n)
        outs[t] = h
    return stack(outs, axis=1)


def lstm_sequence(x: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over ``x`` (B, T, d) from zero states; returns hidden states (B, T, H)."""
    B, T, _ = x.shape
    H = U.shape[0]
    xp = _project(x, W, b)
    h = Tensor(_zeros(x, B, H))
    c = Tensor(_zeros(x, B, H))
    outs = []
    for t in range(T):
        h, c = _lstm_step(getitem(xp, (slice(None), t)), h, c, U)
        outs.append(h)
    return stack(outs, axis=1)


def _zeros(like: Tensor, *shape) -> np.ndarray:
    return np.zeros(shape, dtype=like.dtype)
