"""Convolutions over the time axis (1-D) and the channel-grid x time plane (2-D).

All kernels are cross-correlations implemented with an unfold (im2col)
followed by a single matrix product. Time padding modes:

* ``"same"``: symmetric zeros so that ``t_out = ceil(t / stride)``; the odd
  extra pad goes to the right.
* ``"causal"``: ``(k - 1) * dilation`` zeros on the left, stride 1.
* ``"valid"``: no padding.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _result


def time_padding(t: int, k: int, stride: int, dilation: int, mode: str) -> tuple[int, int, int]:
    """Return (left_pad, right_pad, t_out) for one time axis."""
    span = (k - 1) * dilation + 1
    if mode == "same":
        t_out = math.ceil(t / stride)
        total = max((t_out - 1) * stride + span - t, 0)
        left = total // 2
        return left, total - left, t_out
    if mode == "causal":
        if stride != 1:
            raise ValueError("causal padding requires stride 1")
        return span - 1, 0, t
    if mode == "valid":
        if span > t:
            raise ValueError(f"kernel span {span} longer than input length {t}")
        return 0, 0, (t - span) // stride + 1
    raise ValueError(f"unknown padding mode {mode!r}")


def conv1d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding: str = "same",
) -> Tensor:
    """Cross-correlate ``x`` (n, c_in, t) with ``kernels`` (c_out, c_in, k)."""
    if x.ndim != 3 or kernels.ndim != 3:
        raise ValueError(f"conv1d expects x (n, c, t) and kernels (o, c, k); got {x.shape}, {kernels.shape}")
    n, c, t = x.shape
    o, ck, k = kernels.shape
    if ck != c:
        raise ValueError(f"conv1d: kernels expect {ck} input channels, input has {c}")
    if stride < 1 or dilation < 1:
        raise ValueError("conv1d: stride and dilation must be >= 1")
    left, right, t_out = time_padding(t, k, stride, dilation, padding)
    if (k - 1) * dilation + 1 > t + left + right:
        raise ValueError(f"conv1d: kernel span exceeds padded input length {t + left + right}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if left or right else x.data
    stop = stride * (t_out - 1) + 1
    span = (k - 1) * dilation + 1
    win = sliding_window_view(xp, span, axis=2)[:, :, :stop:stride, ::dilation]  # (n, c, t_out, k)
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n, c * k, t_out)
    wmat = kernels.data.reshape(o, c * k)
    y = np.matmul(wmat, cols)  # (n, o, t_out)
    if bias is not None:
        y += bias.data[:, None]

    def backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(o, c, k) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g).reshape(n, c, k, t_out)
            gx = _col2im_1d(dcols, xp.shape, stride, dilation)[:, :, left : left + t]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return _result(y, parents, backward)


def _col2im_1d(dcols: np.ndarray, shape, stride: int, dilation: int) -> np.ndarray:
    """Scatter-add (n, c, k, t_out) tap gradients back onto the padded input."""
    n, c, k, t_out = dcols.shape
    length = shape[2]
    if stride == 1:
        dxp = np.zeros(shape, dtype=dcols.dtype)
        for j in range(k):
            s0 = j * dilation
            dxp[:, :, s0 : s0 + t_out] += dcols[:, :, j]
        return dxp
    # accumulate each output phase contiguously, then interleave once
    phases = [np.zeros((n, c, len(range(r, length, stride))), dtype=dcols.dtype) for r in range(stride)]
    for j in range(k):
        r, q = divmod(j * dilation, stride)[::-1]
        phases[r][:, :, q : q + t_out] += dcols[:, :, j]
    dxp = np.empty(shape, dtype=dcols.dtype)
    for r, ph in enumerate(phases):
        dxp[:, :, r::stride] = ph
    return dxp


def dilated_conv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, dilation: int = 1, causal: bool = True) -> Tensor:
    """Length-preserving dilated convolution (left padding when causal)."""
    return conv1d(x, kernels, bias, stride=1, dilation=dilation, padding="causal" if causal else "same")


def receptive_span(k: int, dilation: int) -> int:
    return (k - 1) * dilation + 1


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: tuple[int, int] = (1, 1),
    padding: str = "same",
) -> Tensor:
    """2-D cross-correlation of ``x`` (n, c_in, h, t) with ``kernels`` (c_out, c_in, kh, kt).

    The channel-grid axis ``h`` is never padded; ``padding`` applies to time.
    """
    if x.ndim != 4 or kernels.ndim != 4:
        raise ValueError(f"conv2d expects x (n, c, h, t) and kernels (o, c, kh, kt); got {x.shape}, {kernels.shape}")
    n, c, h, t = x.shape
    o, ck, kh, kt = kernels.shape
    sh, st = stride
    if ck != c:
        raise ValueError(f"conv2d: kernels expect {ck} input channels, input has {c}")
    if kh > h:
        raise ValueError(f"conv2d: kernel height {kh} exceeds input height {h}")
    h_out = (h - kh) // sh + 1
    left, right, t_out = time_padding(t, kt, st, 1, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, 0), (left, right))) if left or right else x.data
    hstop = sh * (h_out - 1) + 1
    tstop = st * (t_out - 1) + 1

    win = sliding_window_view(xp, (kh, kt), axis=(2, 3))[:, :, :hstop:sh, :tstop:st]  # (n, c, h_out, t_out, kh, kt)
    cols2 = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h_out * t_out, c * kh * kt)
    wmat = kernels.data.reshape(o, c * kh * kt)
    y = cols2 @ wmat.T
    if bias is not None:
        y += bias.data
    y = np.ascontiguousarray(y.reshape(n, h_out, t_out, o).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h_out * t_out, o)
        gw = (g2.T @ cols2).reshape(o, c, kh, kt) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, h_out, t_out, c, kh, kt)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            if sh == kh and h == h_out * kh:
                # height windows tile the grid exactly: one scatter per time tap
                tiles = dxp.reshape(n, c, h_out, kh, -1)
                for j in range(kt):
                    tiles[..., j : j + tstop : st] += dcols[..., j].transpose(0, 3, 1, 4, 2)
            else:
                for i in range(kh):
                    for j in range(kt):
                        dxp[:, :, i : i + hstop : sh, j : j + tstop : st] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = dxp[:, :, :, left : left + t]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return _result(y, parents, backward)
