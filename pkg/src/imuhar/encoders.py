"""Frame encoders: (n, 24, 120) sensor frames -> (n, bottleneck) features.

Five variants, from least to most weight sharing:

``dense``      flatten -> tanh FC stack
``conv1d``     all 24 channels enter one strided 1-D CNN over time
``conv2d-i``   separate accelerometer / gyroscope paths; 2-D convs fuse xyz
               axes into sensor rows, then the four sensor rows
``conv2d-is``  as ``conv2d-i`` plus a path whose weights are shared by
               both modalities
``conv2d-si``  one three-path sensor module applied to each sensor with the
               same weights; no layer mixes sensors
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tensor, add, concat, lrelu, reshape, tanh
from .layers import Conv1d, Conv2d, Dense, Module
from .preprocess import CHANNELS_PER_SENSOR, FRAME_LEN, N_CHANNELS, N_SENSORS

ENCODER_KINDS = ("dense", "conv1d", "conv2d-i", "conv2d-is", "conv2d-si")
DISPLAY_NAMES = {
    "dense": "Dense",
    "conv1d": "Conv1D",
    "conv2d-i": "Conv2D-I",
    "conv2d-is": "Conv2D-IS",
    "conv2d-si": "Conv2D-SI",
}
LRELU_SLOPE = 0.01


def _kind(name: str) -> str:
    key = name.strip().lower().replace("_", "-")
    if key not in ENCODER_KINDS:
        raise ValueError(f"unknown encoder kind {name!r}; choose from {ENCODER_KINDS}")
    return key


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "conv2d-si"
    bottleneck_size: int = 160
    dense_hidden: tuple[int, ...] = (256, 256, 256)
    conv1d_channels: tuple[int, ...] = (32, 32, 48, 48)
    conv2d_channels: tuple[int, int, int, int] = (16, 32, 48, 48)
    si_channels: tuple[int, int, int] = (16, 32, 48)
    fc_hidden: int = 256
    kernel: int = 5

    def __post_init__(self):
        object.__setattr__(self, "kind", _kind(self.kind))
        for f in ("dense_hidden", "conv1d_channels", "conv2d_channels", "si_channels"):
            object.__setattr__(self, f, tuple(int(v) for v in getattr(self, f)))
        if self.bottleneck_size < 4:
            raise ValueError("bottleneck_size must be at least 4")
        if self.kind == "conv2d-si" and self.bottleneck_size % N_SENSORS:
            raise ValueError(f"conv2d-si bottleneck_size must be divisible by {N_SENSORS}, got {self.bottleneck_size}")
        if len(self.conv2d_channels) != 4 or len(self.si_channels) != 3:
            raise ValueError("conv2d_channels needs 4 widths and si_channels 3 widths")

    @property
    def per_sensor_features(self) -> int:
        return self.bottleneck_size // N_SENSORS

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in fields})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _act(x: Tensor) -> Tensor:
    return lrelu(x, LRELU_SLOPE)


def _time_after_strides(t: int, n_layers: int, stride: int = 2) -> int:
    for _ in range(n_layers):
        t = -(-t // stride)
    return t


# ------------------------------------------------------------------ modality

def split_modalities(frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(24, 120) frame -> acc (4, 3, 120), gyro (4, 3, 120); row (s, a) is sensor s axis a."""
    blocks = np.asarray(frame).reshape(N_SENSORS, CHANNELS_PER_SENSOR, -1)
    return blocks[:, :3].copy(), blocks[:, 3:].copy()


def merge_modalities(acc: np.ndarray, gyro: np.ndarray) -> np.ndarray:
    return np.concatenate([acc, gyro], axis=1).reshape(N_CHANNELS, -1)


def _split_batch(x: Tensor) -> tuple[Tensor, Tensor]:
    """(n, 24, T) -> acc, gyro as (n, 1, 12, T) grids (sensor-major rows)."""
    n, _, t = x.shape
    blocks = reshape(x, (n, N_SENSORS, CHANNELS_PER_SENSOR, t))
    acc = reshape(blocks[:, :, :3], (n, 1, 3 * N_SENSORS, t))
    gyro = reshape(blocks[:, :, 3:], (n, 1, 3 * N_SENSORS, t))
    return acc, gyro


# -------------------------------------------------------------------- models

class Encoder(Module):
    kind: str
    spec: EncoderSpec

    @property
    def output_size(self) -> int:
        return self.spec.bottleneck_size

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.store.dtype))
        if x.ndim != 3 or x.shape[1:] != (N_CHANNELS, FRAME_LEN):
            raise ValueError(f"encoder expects frames of shape (n, {N_CHANNELS}, {FRAME_LEN}), got {x.shape}")
        if x.shape[0] == 0:
            return Tensor(np.zeros((0, self.output_size), dtype=self.store.dtype))
        return self.forward(x)


class DenseEncoder(Encoder):
    def __init__(self, spec: EncoderSpec, store: ParamStore | None = None, seed: int = 0, prefix: str = "enc"):
        super().__init__(store, prefix, seed)
        self.spec = spec
        widths = [N_CHANNELS * FRAME_LEN, *spec.dense_hidden, spec.bottleneck_size]
        self.layers = [Dense(self.store, f"{prefix}.fc{i}", seed, a, b) for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]

    def forward(self, x):
        h = reshape(x, (x.shape[0], N_CHANNELS * FRAME_LEN))
        for layer in self.layers:
            h = tanh(layer(h))
        return h


class Conv1DEncoder(Encoder):
    def __init__(self, spec: EncoderSpec, store: ParamStore | None = None, seed: int = 0, prefix: str = "enc"):
        super().__init__(store, prefix, seed)
        self.spec = spec
        chans = [N_CHANNELS, *spec.conv1d_channels]
        self.convs = [
            Conv1d(self.store, f"{prefix}.conv{i}", seed, a, b, spec.kernel, stride=2)
            for i, (a, b) in enumerate(zip(chans[:-1], chans[1:]))
        ]
        self.t_out = _time_after_strides(FRAME_LEN, len(self.convs))
        self.fc = Dense(self.store, f"{prefix}.fc", seed, chans[-1] * self.t_out, spec.bottleneck_size)

    def forward(self, x):
        h = x
        for conv in self.convs:
            h = _act(conv(h))
        return _act(self.fc(reshape(h, (x.shape[0], -1))))


class _GridPath(Module):
    """xyz fusion (3x5, stride 3x2) -> sensor fusion (4x5, stride 4x1) -> two strided 1-D convs."""

    def __init__(self, store, prefix, seed, channels, k):
        super().__init__(store, prefix, seed)
        c1, c2, c3, c4 = channels
        self.xyz = Conv2d(store, f"{prefix}.xyz", seed, 1, c1, (3, k), (3, 2))
        self.sensors = Conv2d(store, f"{prefix}.sensors", seed, c1, c2, (N_SENSORS, k), (N_SENSORS, 1))
        self.t1 = Conv1d(store, f"{prefix}.t1", seed, c2, c3, k, stride=2)
        self.t2 = Conv1d(store, f"{prefix}.t2", seed, c3, c4, k, stride=2)
        self.out_features = c4 * _time_after_strides(FRAME_LEN, 3)

    def __call__(self, x: Tensor) -> Tensor:
        h = _act(self.xyz(x))  # (m, c1, 4, 60)
        h = _act(self.sensors(h))  # (m, c2, 1, 60)
        h = reshape(h, (h.shape[0], h.shape[1], h.shape[3]))
        h = _act(self.t2(_act(self.t1(h))))
        return reshape(h, (h.shape[0], -1))


class _SensorPath(Module):
    """Per-sensor path: xyz fusion (3x5, stride 3x2) -> two strided 1-D convs."""

    def __init__(self, store, prefix, seed, channels, k):
        super().__init__(store, prefix, seed)
        c1, c2, c3 = channels
        self.xyz = Conv2d(store, f"{prefix}.xyz", seed, 1, c1, (3, k), (3, 2))
        self.t1 = Conv1d(store, f"{prefix}.t1", seed, c1, c2, k, stride=2)
        self.t2 = Conv1d(store, f"{prefix}.t2", seed, c2, c3, k, stride=2)
        self.out_features = c3 * _time_after_strides(FRAME_LEN, 3)

    def __call__(self, x: Tensor) -> Tensor:
        h = _act(self.xyz(x))  # (m, c1, 1, 60)
        h = reshape(h, (h.shape[0], h.shape[1], h.shape[3]))
        h = _act(self.t2(_act(self.t1(h))))
        return reshape(h, (h.shape[0], -1))


def _shared(path, a: Tensor, b: Tensor) -> Tensor:
    """Apply one path to both modalities in a single batch and sum the results."""
    m = a.shape[0]
    both = path(concat([a, b], axis=0))
    return add(both[:m], both[m:])


class Conv2DIEncoder(Encoder):
    shared_path = False

    def __init__(self, spec: EncoderSpec, store: ParamStore | None = None, seed: int = 0, prefix: str = "enc"):
        super().__init__(store, prefix, seed)
        self.spec = spec
        self.acc = _GridPath(self.store, f"{prefix}.acc", seed, spec.conv2d_channels, spec.kernel)
        self.gyro = _GridPath(self.store, f"{prefix}.gyro", seed, spec.conv2d_channels, spec.kernel)
        n_paths = 2
        if self.shared_path:
            self.shared = _GridPath(self.store, f"{prefix}.shared", seed, spec.conv2d_channels, spec.kernel)
            n_paths = 3
        self.fc1 = Dense(self.store, f"{prefix}.fc1", seed, n_paths * self.acc.out_features, spec.fc_hidden)
        self.fc2 = Dense(self.store, f"{prefix}.fc2", seed, spec.fc_hidden, spec.bottleneck_size)

    def forward(self, x):
        acc, gyro = _split_batch(x)
        feats = [self.acc(acc), self.gyro(gyro)]
        if self.shared_path:
            feats.append(_shared(self.shared, acc, gyro))
        h = _act(self.fc1(concat(feats, axis=1)))
        return _act(self.fc2(h))


class Conv2DISEncoder(Conv2DIEncoder):
    shared_path = True


class Conv2DSIEncoder(Encoder):
    def __init__(self, spec: EncoderSpec, store: ParamStore | None = None, seed: int = 0, prefix: str = "enc"):
        super().__init__(store, prefix, seed)
        self.spec = spec
        ch, k = spec.si_channels, spec.kernel
        self.acc = _SensorPath(self.store, f"{prefix}.acc", seed, ch, k)
        self.gyro = _SensorPath(self.store, f"{prefix}.gyro", seed, ch, k)
        self.shared = _SensorPath(self.store, f"{prefix}.shared", seed, ch, k)
        self.fc1 = Dense(self.store, f"{prefix}.fc1", seed, 3 * self.acc.out_features, spec.fc_hidden)
        self.fc2 = Dense(self.store, f"{prefix}.fc2", seed, spec.fc_hidden, spec.per_sensor_features)

    def forward(self, x):
        n, _, t = x.shape
        per_sensor = reshape(x, (n * N_SENSORS, CHANNELS_PER_SENSOR, t))  # row = 4 * frame + sensor
        acc = reshape(per_sensor[:, :3], (n * N_SENSORS, 1, 3, t))
        gyro = reshape(per_sensor[:, 3:], (n * N_SENSORS, 1, 3, t))
        h = concat([self.acc(acc), self.gyro(gyro), _shared(self.shared, acc, gyro)], axis=1)
        h = _act(self.fc2(_act(self.fc1(h))))
        return reshape(h, (n, self.spec.bottleneck_size))


_CLASSES = {
    "dense": DenseEncoder,
    "conv1d": Conv1DEncoder,
    "conv2d-i": Conv2DIEncoder,
    "conv2d-is": Conv2DISEncoder,
    "conv2d-si": Conv2DSIEncoder,
}


def build_encoder(spec: EncoderSpec, seed: int = 0, store: ParamStore | None = None, prefix: str = "enc") -> Encoder:
    """Seeded, deterministic encoder for ``spec``."""
    if not isinstance(spec, EncoderSpec):
        raise TypeError("spec must be an EncoderSpec")
    return _CLASSES[spec.kind](spec, store=store, seed=seed, prefix=prefix)


def encode(model: Encoder, frames) -> Tensor:
    """(n, 24, 120) frames -> (n, bottleneck_size) features."""
    return model(frames)
