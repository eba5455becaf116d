"""Encoder + time-series system, inference helpers and checkpoint archive."""
from __future__ import annotations

import io
import json
import os
from pathlib import Path

import numpy as np

from .autodiff import ParamStore, Tensor, mul, no_grad, reshape
from .encoders import EncoderSpec, build_encoder
from .preprocess import ACC_ROWS, FRAME_LEN, GYRO_ROWS, N_CHANNELS
from .timeseries import TimeSeriesSpec, build_ts

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class System:
    """Frames (B, T, 24, 120) -> encoder -> (B, T, F) -> time-series head -> (B, T, 7) logits.

    Inputs are divided by a fixed per-modality scale (accelerometer and
    gyroscope RMS of the training data) before the encoder. A single scalar
    per modality keeps zeros at zero and commutes with sensor rotations.
    """

    def __init__(self, encoder_spec: EncoderSpec, ts_spec: TimeSeriesSpec, seed: int = 0, dtype=np.float64):
        self.encoder_spec = encoder_spec
        self.ts_spec = ts_spec
        self.seed = int(seed)
        self.store = ParamStore(np.float64)
        self.encoder = build_encoder(encoder_spec, seed=seed, store=self.store)
        self.ts = build_ts(ts_spec, encoder_spec.bottleneck_size, seed=seed, store=self.store)
        if np.dtype(dtype) != np.float64:
            self.store.astype(dtype)
        self.input_scale = np.ones(N_CHANNELS)

    @property
    def dtype(self):
        return self.store.dtype

    @property
    def name(self) -> str:
        return f"{self.encoder_spec.kind}+{self.ts_spec.kind}"

    def param_count(self) -> int:
        return self.store.count()

    def fit_input_scale(self, frames: np.ndarray) -> np.ndarray:
        """Set per-modality RMS scales from training frames (n, 24, 120)."""
        scale = np.ones(N_CHANNELS)
        for rows in (ACC_ROWS, GYRO_ROWS):
            rms = float(np.sqrt(np.mean(np.square(frames[:, rows], dtype=np.float64))))
            scale[rows] = rms if rms > 0 else 1.0
        self.input_scale = scale
        return scale

    def logits(self, frames: np.ndarray, bottleneck_mask: np.ndarray | None = None) -> Tensor:
        """(B, T, 24, 120) -> (B, T, 7). ``bottleneck_mask`` (B, T, F) zero-masks features."""
        frames = np.asarray(frames)
        if frames.ndim != 4 or frames.shape[2:] != (N_CHANNELS, FRAME_LEN):
            raise ValueError(f"expected (B, T, {N_CHANNELS}, {FRAME_LEN}) frames, got {frames.shape}")
        B, T = frames.shape[:2]
        x = (frames.reshape(B * T, N_CHANNELS, FRAME_LEN) / self.input_scale[:, None]).astype(self.dtype)
        feats = reshape(self.encoder(Tensor(x)), (B, T, -1))
        if bottleneck_mask is not None:
            feats = mul(feats, Tensor(bottleneck_mask.astype(self.dtype)))
        return self.ts(feats)

    def predict_logits(self, frames: np.ndarray, seq_len: int = 100) -> np.ndarray:
        """(n, 24, 120) recording frames -> (n, 7), run as consecutive ``seq_len`` sequences."""
        n = len(frames)
        out = np.zeros((n, self.ts_spec.n_classes))
        if n == 0:
            return out
        full = (n // seq_len) * seq_len
        with no_grad():
            if full:
                # chunk the batch so encoder activations stay small
                per = max(1, 800 // seq_len)
                seqs = frames[:full].reshape(full // seq_len, seq_len, N_CHANNELS, FRAME_LEN)
                for i in range(0, len(seqs), per):
                    blk = self.logits(seqs[i : i + per]).data
                    out[i * seq_len : (i + len(blk)) * seq_len] = blk.reshape(-1, blk.shape[-1])
            if full < n:
                out[full:] = self.logits(frames[None, full:]).data[0]
        return out

    def predict(self, frames: np.ndarray, seq_len: int = 100) -> np.ndarray:
        return np.argmax(self.predict_logits(frames, seq_len), axis=1)

    # ------------------------------------------------------------ persistence

    def state(self) -> dict[str, np.ndarray]:
        return self.store.snapshot()

    def load_state(self, values: dict[str, np.ndarray]):
        self.store.load(values)

    def meta(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "encoder": self.encoder_spec.to_dict(),
            "timeseries": self.ts_spec.to_dict(),
            "seed": self.seed,
            "dtype": str(self.dtype),
        }


def save_checkpoint(path, systems: System | list[System], extra: dict | None = None) -> None:
    """Named-tensor archive (.npz) holding one or more systems plus JSON metadata.

    Entry ``m{i}/{param}`` stores each parameter with its shape and raw
    little-endian values; ``m{i}/input_scale`` the input scale; ``meta`` the
    specs. The file is written atomically.
    """
    if isinstance(systems, System):
        systems = [systems]
    arrays: dict[str, np.ndarray] = {}
    meta = {"version": CHECKPOINT_VERSION, "models": [], "extra": extra or {}}
    for i, s in enumerate(systems):
        for name, v in s.state().items():
            arrays[f"m{i}/{name}"] = v.astype(v.dtype.newbyteorder("<"))
        arrays[f"m{i}/input_scale"] = s.input_scale.astype("<f8")
        meta["models"].append(s.meta())
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[list[System], dict]:
    try:
        z = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with z:
        if "meta" not in z.files:
            raise CheckpointError(f"{path}: missing metadata entry")
        meta = json.loads(bytes(z["meta"]).decode())
        systems = []
        for i, m in enumerate(meta["models"]):
            try:
                enc = EncoderSpec.from_dict(m["encoder"])
                ts = TimeSeriesSpec.from_dict(m["timeseries"])
            except (KeyError, TypeError, ValueError) as exc:
                raise CheckpointError(f"{path}: invalid spec for model {i}: {exc}") from exc
            s = System(enc, ts, seed=m["seed"], dtype=m["dtype"])
            prefix = f"m{i}/"
            values = {k[len(prefix) :]: z[k] for k in z.files if k.startswith(prefix) and not k.endswith("/input_scale")}
            try:
                s.load_state(values)
            except (KeyError, ValueError) as exc:
                raise CheckpointError(f"{path}: spec/checkpoint mismatch for model {i}: {exc}") from exc
            s.input_scale = np.array(z[prefix + "input_scale"], dtype=np.float64)
            systems.append(s)
    return systems, meta.get("extra", {})
