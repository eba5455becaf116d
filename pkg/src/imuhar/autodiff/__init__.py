"""Minimal reverse-mode autodiff over numpy arrays, sized for the HAR models."""
from .conv import conv1d, conv2d, dilated_conv1d, receptive_span, time_padding
from .losses import cross_entropy_loss
from .optim import ParamStore, adam_step, fan_in_uniform, param_rng
from .recurrent import gru_cell, gru_sequence, lstm_cell, lstm_sequence
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    fully_connected,
    gated,
    getitem,
    log_softmax,
    lrelu,
    matmul,
    mean_all,
    mul,
    no_grad,
    reshape,
    sigmoid,
    softmax,
    softmax_np,
    stack,
    sub,
    sum_all,
    tanh,
    transpose,
)

__all__ = [
    "Tensor",
    "ParamStore",
    "adam_step",
    "add",
    "as_tensor",
    "concat",
    "conv1d",
    "conv2d",
    "cross_entropy_loss",
    "dilated_conv1d",
    "fan_in_uniform",
    "fully_connected",
    "gated",
    "getitem",
    "gru_cell",
    "gru_sequence",
    "log_softmax",
    "lrelu",
    "lstm_cell",
    "lstm_sequence",
    "matmul",
    "mean_all",
    "mul",
    "no_grad",
    "param_rng",
    "receptive_span",
    "reshape",
    "sigmoid",
    "softmax",
    "softmax_np",
    "stack",
    "sub",
    "sum_all",
    "tanh",
    "time_padding",
    "transpose",
]
