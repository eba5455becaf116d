"""Time-series heads: (B, T, F) bottleneck sequences -> (B, T, 7) class logits."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ParamStore,
    Tensor,
    add,
    concat,
    dilated_conv1d,
    gated,
    getitem,
    gru_sequence,
    lrelu,
    lstm_sequence,
    reshape,
    transpose,
)
from .layers import Dense, Module

TS_KINDS = ("dense", "lstm", "gru", "bgru", "wavenet")
DISPLAY_NAMES = {"dense": "Dense", "lstm": "LSTM", "gru": "GRU", "bgru": "BGRU", "wavenet": "WaveNet"}
N_CLASSES = 7
CLASS_NAMES = ("Still", "Proto movement", "Turn L", "Turn R", "Pivot L", "Pivot R", "Crawl commando")
RECURRENT = ("lstm", "gru", "bgru")


@dataclass(frozen=True)
class TimeSeriesSpec:
    kind: str = "wavenet"
    hidden_size: int = 128
    dense_hidden: int = 128
    residual_channels: int = 64
    skip_channels: int = 64
    kernel: int = 5
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    n_classes: int = N_CLASSES

    def __post_init__(self):
        kind = self.kind.strip().lower()
        if kind not in TS_KINDS:
            raise ValueError(f"unknown time-series kind {self.kind!r}; choose from {TS_KINDS}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.n_classes != N_CLASSES:
            raise ValueError(f"n_classes must be {N_CLASSES} (movement categories)")
        if min(self.hidden_size, self.dense_hidden, self.residual_channels, self.skip_channels, self.kernel) < 1:
            raise ValueError("layer sizes must be positive")
        if not self.dilations or min(self.dilations) < 1:
            raise ValueError("dilations must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TimeSeriesSpec":
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in fields})


def receptive_field(spec: TimeSeriesSpec) -> int:
    """Frames that can influence one WaveNet output: 1 + (k - 1) * sum(dilations)."""
    if spec.kind != "wavenet":
        raise ValueError(f"receptive field is defined for wavenet only, not {spec.kind!r}")
    return 1 + (spec.kernel - 1) * sum(spec.dilations)


def _act(x):
    return lrelu(x, 0.01)


def _timewise(layer: Dense, x: Tensor) -> Tensor:
    B, T, F = x.shape
    return reshape(layer(reshape(x, (B * T, F))), (B, T, -1))


class TimeSeriesModel(Module):
    spec: TimeSeriesSpec
    input_dim: int

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.store.dtype))
        if x.ndim == 2:
            return reshape(self(reshape(x, (1,) + x.shape)), (x.shape[0], -1))
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ValueError(f"time-series module expects (B, T, {self.input_dim}) features, got {x.shape}")
        return self.forward(x)


class DenseTS(TimeSeriesModel):
    def __init__(self, spec, input_dim, store=None, seed=0, prefix="ts"):
        super().__init__(store, prefix, seed)
        self.spec, self.input_dim = spec, input_dim
        self.hidden = Dense(self.store, f"{prefix}.hidden", seed, input_dim, spec.dense_hidden)
        self.out = Dense(self.store, f"{prefix}.out", seed, spec.dense_hidden, spec.n_classes)

    def forward(self, x):
        return _timewise(self.out, _act(_timewise(self.hidden, x)))


class _GRULayer(Module):
    def __init__(self, store, prefix, seed, d_in, H):
        super().__init__(store, prefix, seed)
        self.W = self.weight("W", (d_in, 3 * H), d_in)
        self.U = self.weight("U", (H, 3 * H), H)
        self.b = self.bias("b", 3 * H)

    def __call__(self, x, reverse=False):
        return gru_sequence(x, self.W, self.U, self.b, reverse=reverse)


class GRUTS(TimeSeriesModel):
    def __init__(self, spec, input_dim, store=None, seed=0, prefix="ts"):
        super().__init__(store, prefix, seed)
        self.spec, self.input_dim = spec, input_dim
        self.rnn = _GRULayer(self.store, f"{prefix}.gru", seed, input_dim, spec.hidden_size)
        self.out = Dense(self.store, f"{prefix}.out", seed, spec.hidden_size, spec.n_classes)

    def forward(self, x):
        return _timewise(self.out, self.rnn(x))


class BGRUTS(TimeSeriesModel):
    def __init__(self, spec, input_dim, store=None, seed=0, prefix="ts"):
        super().__init__(store, prefix, seed)
        self.spec, self.input_dim = spec, input_dim
        self.fwd = _GRULayer(self.store, f"{prefix}.gru_fwd", seed, input_dim, spec.hidden_size)
        self.bwd = _GRULayer(self.store, f"{prefix}.gru_bwd", seed, input_dim, spec.hidden_size)
        self.out = Dense(self.store, f"{prefix}.out", seed, 2 * spec.hidden_size, spec.n_classes)

    def forward(self, x):
        h = concat([self.fwd(x), self.bwd(x, reverse=True)], axis=2)
        return _timewise(self.out, h)


class LSTMTS(TimeSeriesModel):
    def __init__(self, spec, input_dim, store=None, seed=0, prefix="ts"):
        super().__init__(store, prefix, seed)
        self.spec, self.input_dim = spec, input_dim
        H = spec.hidden_size
        self.W = self.weight("lstm.W", (input_dim, 4 * H), input_dim)
        self.U = self.weight("lstm.U", (H, 4 * H), H)
        self.b = self.bias("lstm.b", 4 * H)
        self.out = Dense(self.store, f"{prefix}.out", seed, H, spec.n_classes)

    def forward(self, x):
        return _timewise(self.out, lstm_sequence(x, self.W, self.U, self.b))


class _WaveNetBlock(Module):
    """Gated causal dilated conv; 1x1 residual and skip projections.

    The last block feeds only the skip sum, so it carries no residual projection.
    """

    def __init__(self, store, prefix, seed, R, S, k, dilation, residual=True):
        super().__init__(store, prefix, seed)
        self.dilation = dilation
        self.Wf = self.weight("filter.W", (R, R, k), R * k)
        self.bf = self.bias("filter.b", R)
        self.Wg = self.weight("gate.W", (R, R, k), R * k)
        self.bg = self.bias("gate.b", R)
        self.res = Dense(store, f"{prefix}.res", seed, R, R) if residual else None
        self.skip = Dense(store, f"{prefix}.skip", seed, R, S)

    def __call__(self, h: Tensor) -> tuple[Tensor, Tensor]:
        # h: (B, R, T)
        # filter and gate read the same taps: one fused conv, split afterwards
        R = self.Wf.shape[0]
        fg = dilated_conv1d(h, concat([self.Wf, self.Wg]), concat([self.bf, self.bg]), dilation=self.dilation, causal=True)
        z = transpose(gated(getitem(fg, (slice(None), slice(0, R))), getitem(fg, (slice(None), slice(R, None)))), (0, 2, 1))
        skip = _timewise(self.skip, z)  # (B, T, S)
        if self.res is None:
            return h, skip
        return add(h, transpose(_timewise(self.res, z), (0, 2, 1))), skip


class WaveNetTS(TimeSeriesModel):
    def __init__(self, spec, input_dim, store=None, seed=0, prefix="ts"):
        super().__init__(store, prefix, seed)
        self.spec, self.input_dim = spec, input_dim
        R, S = spec.residual_channels, spec.skip_channels
        self.inp = Dense(self.store, f"{prefix}.input", seed, input_dim, R)
        self.blocks = [
            _WaveNetBlock(self.store, f"{prefix}.block{i}", seed, R, S, spec.kernel, d,
                          residual=i < len(spec.dilations) - 1)
            for i, d in enumerate(spec.dilations)
        ]
        self.post = Dense(self.store, f"{prefix}.post", seed, S, S)
        self.out = Dense(self.store, f"{prefix}.out", seed, S, spec.n_classes)

    def forward(self, x):
        h = transpose(_timewise(self.inp, x), (0, 2, 1))  # (B, R, T)
        skips = None
        for block in self.blocks:
            h, s = block(h)
            skips = s if skips is None else add(skips, s)
        y = _act(_timewise(self.post, _act(skips)))
        return _timewise(self.out, y)


_CLASSES = {"dense": DenseTS, "gru": GRUTS, "bgru": BGRUTS, "lstm": LSTMTS, "wavenet": WaveNetTS}


def build_ts(spec: TimeSeriesSpec, input_dim: int, seed: int = 0, store: ParamStore | None = None, prefix: str = "ts") -> TimeSeriesModel:
    if not isinstance(spec, TimeSeriesSpec):
        raise TypeError("spec must be a TimeSeriesSpec")
    if input_dim < 1:
        raise ValueError("input_dim must be positive")
    return _CLASSES[spec.kind](spec, input_dim, store=store, seed=seed, prefix=prefix)


def ts_forward(model: TimeSeriesModel, feats) -> Tensor:
    """(n, F) or (B, T, F) features -> logits of matching leading shape and 7 classes."""
    return model(feats)
