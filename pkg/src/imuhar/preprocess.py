"""Raw packet streams -> synchronized, filtered, windowed frame tensors.

Channel order is sensor-major: row ``6 * s + j`` holds sensor ``s``,
channel ``j`` of (ax, ay, az, gx, gy, gz).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

N_SENSORS = 4
CHANNELS_PER_SENSOR = 6
N_CHANNELS = N_SENSORS * CHANNELS_PER_SENSOR
SAMPLES_PER_PACKET = 4
RATE_HZ = 52.0
FRAME_LEN = 120
FRAME_HOP = 60
BIAS_WINDOW = 64
MEDIAN_WIDTH = 5

CHANNEL_NAMES = tuple(
    f"s{s}_{c}" for s in range(N_SENSORS) for c in ("ax", "ay", "az", "gx", "gy", "gz")
)
CHANNEL_UNITS = tuple(u for _ in range(N_SENSORS) for u in ("g",) * 3 + ("deg/s",) * 3)
GYRO_ROWS = np.array([6 * s + j for s in range(N_SENSORS) for j in (3, 4, 5)])
ACC_ROWS = np.array([6 * s + j for s in range(N_SENSORS) for j in (0, 1, 2)])


def channel_index(sensor: int, axis: int) -> int:
    """Row of ``axis`` (0..5, acc xyz then gyro xyz) for ``sensor``."""
    return CHANNELS_PER_SENSOR * sensor + axis


@dataclass(frozen=True)
class Packet:
    sensor_id: int
    timestamps: np.ndarray  # (4,) seconds
    samples: np.ndarray  # (4, 6)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        sm = np.asarray(self.samples)
        if ts.shape != (SAMPLES_PER_PACKET,) or sm.shape != (SAMPLES_PER_PACKET, CHANNELS_PER_SENSOR):
            raise ValueError("a packet holds exactly 4 timestamps and 4x6 samples")
        if not np.all(np.diff(ts) > 0):
            raise ValueError("packet timestamps must be strictly increasing")
        if not 0 <= self.sensor_id < N_SENSORS:
            raise ValueError(f"sensor_id {self.sensor_id} out of range")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "samples", sm)


@dataclass
class SensorStream:
    """All packets of one sensor, stacked: timestamps (P, 4), samples (P, 4, 6)."""

    timestamps: np.ndarray
    samples: np.ndarray

    @classmethod
    def from_packets(cls, packets: list[Packet]) -> "SensorStream":
        if not packets:
            return cls(np.zeros((0, 4)), np.zeros((0, 4, 6)))
        return cls(np.stack([p.timestamps for p in packets]), np.stack([p.samples for p in packets]))

    @property
    def n_packets(self) -> int:
        return int(self.timestamps.shape[0])

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        return self.timestamps.reshape(-1), self.samples.reshape(-1, CHANNELS_PER_SENSOR)

    def packets(self, sensor_id: int) -> list[Packet]:
        return [Packet(sensor_id, t, s) for t, s in zip(self.timestamps, self.samples)]


@dataclass
class RawRecording:
    sensors: list[SensorStream]
    rate: float = RATE_HZ
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.sensors) != N_SENSORS:
            raise ValueError(f"a recording needs all {N_SENSORS} sensors, got {len(self.sensors)}")
        for s, st in enumerate(self.sensors):
            t = st.timestamps.reshape(-1)
            if t.size and np.any(np.diff(t) < 0):
                raise ValueError(f"sensor {s}: timestamps decrease across packets")

    def packets(self) -> list[Packet]:
        out = []
        for s, st in enumerate(self.sensors):
            out.extend(st.packets(s))
        return out


@dataclass
class FrameTensor:
    values: np.ndarray  # (n_frames, 24, 120)
    frame_hop: int = FRAME_HOP
    short_recording: bool = False

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])

    def __len__(self):
        return self.n_frames


def expected_frame_count(n_samples: int) -> int:
    if n_samples < FRAME_LEN:
        return 0
    return (n_samples - FRAME_LEN) // FRAME_HOP + 1


def ideal_grid(rec: RawRecording) -> np.ndarray:
    """Uniform time base over the span covered by every sensor."""
    firsts, lasts = [], []
    for s, st in enumerate(rec.sensors):
        t, _ = st.flat()
        if t.size < 2:
            raise ValueError(f"sensor {s}: need at least 2 samples to interpolate, got {t.size}")
        firsts.append(t[0])
        lasts.append(t[-1])
    start, stop = max(firsts), min(lasts)
    if stop < start:
        raise ValueError("sensors do not overlap in time")
    n = int(np.floor((stop - start) * rec.rate + 1e-9)) + 1
    return start + np.arange(n) / rec.rate


def interpolate_to_uniform(rec: RawRecording) -> np.ndarray:
    """Linearly resample every channel onto the shared ideal grid -> (24, N_rec).

    Lost packets are bridged by the same linear interpolation.
    """
    grid = ideal_grid(rec)
    out = np.empty((N_CHANNELS, grid.size))
    for s, st in enumerate(rec.sensors):
        t, x = st.flat()
        for j in range(CHANNELS_PER_SENSOR):
            out[channel_index(s, j)] = np.interp(grid, t, x[:, j].astype(np.float64))
    return out


def estimate_gyro_bias(channel: np.ndarray, window: int = BIAS_WINDOW) -> float:
    """Mean of the contiguous ``window``-sample segment with the smallest variance."""
    x = np.asarray(channel, dtype=np.float64)
    if x.size < window:
        raise ValueError(f"bias estimation needs at least {window} samples, got {x.size}")
    win = np.lib.stride_tricks.sliding_window_view(x, window)
    k = int(np.argmin(win.var(axis=1)))
    return float(x[k : k + window].mean())


def remove_gyro_bias(sig: np.ndarray) -> np.ndarray:
    out = np.array(sig, dtype=np.float64, copy=True)
    for r in GYRO_ROWS:
        out[r] -= estimate_gyro_bias(out[r])
    return out


def median_filter_5(channel: np.ndarray) -> np.ndarray:
    """Centered 5-sample running median; windows shrink symmetrically at the edges."""
    x = np.asarray(channel, dtype=np.float64)
    n = x.size
    out = x.copy()
    if n >= MEDIAN_WIDTH:
        out[2 : n - 2] = np.median(np.lib.stride_tricks.sliding_window_view(x, MEDIAN_WIDTH), axis=1)
    # edges: radius limited by distance to the boundary
    for i in list(range(min(2, n))) + list(range(max(n - 2, 2), n)):
        r = min(i, n - 1 - i, 2)
        out[i] = np.median(x[i - r : i + r + 1])
    return out


def median_filter_channels(sig: np.ndarray) -> np.ndarray:
    return np.stack([median_filter_5(row) for row in sig])


def window_frames(sig: np.ndarray) -> FrameTensor:
    """Cut (24, N_rec) into rectangular 120-sample frames with hop 60."""
    sig = np.asarray(sig)
    n = sig.shape[1]
    count = expected_frame_count(n)
    if count == 0:
        warnings.warn(f"recording has {n} samples (< {FRAME_LEN}); no frames produced", stacklevel=2)
        return FrameTensor(np.zeros((0, sig.shape[0], FRAME_LEN), dtype=sig.dtype), short_recording=True)
    view = np.lib.stride_tricks.sliding_window_view(sig, FRAME_LEN, axis=1)[:, ::FRAME_HOP]
    return FrameTensor(np.ascontiguousarray(view[:, :count].transpose(1, 0, 2)))


def preprocess(rec: RawRecording) -> FrameTensor:
    """Full chain: interpolate, subtract gyro bias, median filter, window."""
    sig = interpolate_to_uniform(rec)
    sig = remove_gyro_bias(sig)
    sig = median_filter_channels(sig)
    return window_frames(sig)


def frames_to_signal(frames: np.ndarray) -> np.ndarray:
    """Inverse of windowing for hop-60 frames: (n, C, 120) -> (C, (n-1)*60+120)."""
    n, c, L = frames.shape
    if n == 0:
        return np.zeros((c, 0), dtype=frames.dtype)
    out = np.empty((c, (n - 1) * FRAME_HOP + L), dtype=frames.dtype)
    for i in range(n):
        out[:, i * FRAME_HOP : i * FRAME_HOP + L] = frames[i]
    return out
