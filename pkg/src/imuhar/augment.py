"""Training-time augmentations for (n, 24, 120) frame batches.

Every function takes an explicit ``numpy.random.Generator`` (or an integer
seed) so a training run replays identical masks, angles and warps.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .preprocess import CHANNELS_PER_SENSOR, FRAME_LEN, N_SENSORS

AUGMENT_KEYS = ("dr1", "dr2", "rot", "tw", "ds")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class AugmentConfig:
    """Probabilities and ranges; ``enabled`` uses the keys dr1 (input dropout),
    dr2 (bottleneck dropout), rot (rotation), tw (time warp), ds (sensor dropout)."""

    input_dropout_p: float = 0.3
    bottleneck_dropout_p: float = 0.3
    sensor_dropout_p: float = 0.3
    rotation_max_deg: float = 10.0
    timewarp_amplitude: tuple[float, float] = (0.0, 1.0)
    timewarp_frequency: tuple[float, float] = (0.0, 1.0)
    timewarp_phase: tuple[float, float] = (0.0, 1.0)
    enabled: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        en = self.enabled
        if isinstance(en, str):
            en = [e for e in en.replace(" ", "").split(",") if e]
        en = frozenset(en)
        bad = en - set(AUGMENT_KEYS)
        if bad:
            raise ValueError(f"unknown augmentation(s) {sorted(bad)}; choose from {AUGMENT_KEYS}")
        object.__setattr__(self, "enabled", en)
        for name in ("input_dropout_p", "bottleneck_dropout_p", "sensor_dropout_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.rotation_max_deg < 0:
            raise ValueError("rotation_max_deg must be non-negative")
        for name in ("timewarp_amplitude", "timewarp_frequency", "timewarp_phase"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (float(lo), float(hi)))
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"{name} must be a sub-range of [0, 1]")

    def uses(self, key: str) -> bool:
        return key in self.enabled

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["enabled"] = ",".join(k for k in AUGMENT_KEYS if k in self.enabled)
        d["timewarp_amplitude"] = list(self.timewarp_amplitude)
        d["timewarp_frequency"] = list(self.timewarp_frequency)
        d["timewarp_phase"] = list(self.timewarp_phase)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names}
        return cls(**kw)


# ------------------------------------------------------------------ dropout

def _check_p(p: float):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1], got {p}")


def dropout_mask(shape, p: float, seed) -> np.ndarray:
    """Keep-mask with each element zeroed independently with probability ``p`` (no rescaling)."""
    _check_p(p)
    if p == 0.0:
        return np.ones(shape)
    return (_rng(seed).random(shape) >= p).astype(np.float64)


def input_dropout(batch: np.ndarray, p: float, seed) -> np.ndarray:
    _check_p(p)
    if p == 0.0:
        return batch.copy()
    return batch * dropout_mask(batch.shape, p, seed).astype(batch.dtype)


def bottleneck_dropout(feats: np.ndarray, p: float, seed) -> np.ndarray:
    """Same masking as ``input_dropout`` for (n, F) features; training uses the mask form
    (``dropout_mask``) so gradients flow through the kept units."""
    return input_dropout(feats, p, seed)


def sensor_dropout(batch: np.ndarray, p: float, seed) -> tuple[np.ndarray, int | None]:
    """With probability ``p`` zero all 6 channels of one uniformly chosen sensor.

    Returns the batch and the dropped sensor (or None). Works on any array whose
    second-to-last axis is the 24 channels.
    """
    _check_p(p)
    rng = _rng(seed)
    out = batch.copy()
    if rng.random() >= p:
        return out, None
    s = int(rng.integers(N_SENSORS))
    out[..., CHANNELS_PER_SENSOR * s : CHANNELS_PER_SENSOR * (s + 1), :] = 0
    return out, s


# ----------------------------------------------------------------- rotation

def rotation_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Yaw-pitch-roll rotation Rz(alpha) @ Ry(beta) @ Rx(gamma), radians."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    Rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, -sg], [0.0, sg, cg]])
    return Rz @ Ry @ Rx


def apply_rotations(batch: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """Rotate each sensor's acc and gyro triplets by ``mats[s]`` (4, 3, 3)."""
    out = batch.copy()
    for s in range(N_SENSORS):
        base = CHANNELS_PER_SENSOR * s
        for off in (0, 3):
            rows = slice(base + off, base + off + 3)
            out[..., rows, :] = np.einsum("ij,...jt->...it", mats[s], batch[..., rows, :])
    return out


def rotate_sensors(batch: np.ndarray, max_deg: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Random per-sensor rotation, angles ~ U(-max_deg, max_deg); returns (batch, matrices)."""
    rng = _rng(seed)
    angles = np.deg2rad(rng.uniform(-max_deg, max_deg, size=(N_SENSORS, 3)))
    mats = np.stack([rotation_matrix(*a) for a in angles])
    return apply_rotations(batch, mats), mats


# ---------------------------------------------------------------- time warp

def warp_timebase(A: float, omega: float, phi: float, n: int = FRAME_LEN) -> np.ndarray:
    """Warped sample positions in [0, n-1] with endpoints pinned.

    Step sizes are ``2 + A sin(2 pi omega u + 2 pi phi)`` at normalized
    positions ``u = i / (n - 1)``; their running sum is mapped affinely onto
    the original span.
    """
    u = np.arange(n) / (n - 1)
    dt = 2.0 + A * np.sin(2 * np.pi * omega * u + 2 * np.pi * phi)
    tau = np.cumsum(dt)
    return (tau - tau[0]) / (tau[-1] - tau[0]) * (n - 1)


def time_warp(frame: np.ndarray, A: float, omega: float, phi: float) -> np.ndarray:
    """Resample every channel of a (C, 120) frame onto the warped time base."""
    for name, v in (("A", A), ("omega", omega), ("phi", phi)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    n = frame.shape[-1]
    pos = warp_timebase(A, omega, phi, n)
    i0 = np.clip(np.floor(pos).astype(int), 0, n - 2)
    w = pos - i0
    return frame[..., i0] * (1.0 - w) + frame[..., i0 + 1] * w


def time_warp_batch(batch: np.ndarray, cfg: AugmentConfig, seed) -> np.ndarray:
    rng = _rng(seed)
    flat = batch.reshape(-1, *batch.shape[-2:])
    out = np.empty_like(flat)
    for i, fr in enumerate(flat):
        A = rng.uniform(*cfg.timewarp_amplitude)
        om = rng.uniform(*cfg.timewarp_frequency)
        ph = rng.uniform(*cfg.timewarp_phase)
        out[i] = time_warp(fr, A, om, ph)
    return out.reshape(batch.shape)


# ----------------------------------------------------------------- pipeline

def augment_batch(batch: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply the enabled input-side augmentations to a (..., 24, 120) minibatch.

    Order: time warp, rotation, sensor dropout, input dropout. Bottleneck
    dropout lives inside the model forward pass.
    """
    out = batch
    if cfg.uses("tw"):
        out = time_warp_batch(out, cfg, rng)
    if cfg.uses("rot"):
        out, _ = rotate_sensors(out, cfg.rotation_max_deg, rng)
    if cfg.uses("ds"):
        out, _ = sensor_dropout(out, cfg.sensor_dropout_p, rng)
    if cfg.uses("dr1"):
        out = input_dropout(out, cfg.input_dropout_p, rng)
    return out
