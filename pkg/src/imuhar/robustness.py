"""Evaluation-time sensor failures: whole-sensor drop and bursty packet loss."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .harness import Dataset
from .metrics import confusion_matrix, uwaf
from .model import System
from .preprocess import CHANNELS_PER_SENSOR, FRAME_HOP, N_SENSORS, SAMPLES_PER_PACKET, FrameTensor
from .timeseries import N_CLASSES

KINDS = ("clean", "sensor_drop", "packet_loss")
SUITE_COLUMNS = ("model", "condition", "severity", "combination", "uwaf", "delta_vs_clean")


@dataclass(frozen=True)
class NoiseCondition:
    kind: str
    sensors_dropped: int = 0
    loss_rate: float = 0.0
    burst_len: int = SAMPLES_PER_PACKET

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; choose from {KINDS}")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")
        if self.burst_len < 1:
            raise ValueError("burst_len must be at least 1")
        if not 0 <= self.sensors_dropped <= N_SENSORS:
            raise ValueError(f"sensors_dropped must lie in [0, {N_SENSORS}]")

    @property
    def severity(self) -> str:
        if self.kind == "sensor_drop":
            return {1: "moderate", 2: "severe"}.get(self.sensors_dropped, "custom")
        if self.kind == "packet_loss":
            return {0.25: "moderate", 0.5: "severe"}.get(self.loss_rate, "custom")
        return "none"

    @property
    def label(self) -> str:
        if self.kind == "sensor_drop":
            return f"sensor_drop:{self.sensors_dropped}"
        if self.kind == "packet_loss":
            return f"packet_loss:{self.loss_rate:g}"
        return "clean"


CLEAN = NoiseCondition("clean")
DEFAULT_CONDITIONS = (
    NoiseCondition("sensor_drop", sensors_dropped=1),
    NoiseCondition("sensor_drop", sensors_dropped=2),
    NoiseCondition("packet_loss", loss_rate=0.25),
    NoiseCondition("packet_loss", loss_rate=0.5),
)


def parse_noise(text: str) -> NoiseCondition:
    """``sensor_drop:K`` or ``packet_loss:RATE`` (``clean`` also accepted)."""
    text = text.strip()
    if text == "clean":
        return CLEAN
    kind, _, arg = text.partition(":")
    try:
        if kind == "sensor_drop":
            return NoiseCondition(kind, sensors_dropped=int(arg))
        if kind == "packet_loss":
            return NoiseCondition(kind, loss_rate=float(arg))
    except ValueError as exc:
        raise ValueError(f"bad noise spec {text!r}: {exc}") from exc
    raise ValueError(f"bad noise spec {text!r}; use sensor_drop:K or packet_loss:RATE")


# ------------------------------------------------------------------- noises

def _rows(sensor: int) -> slice:
    return slice(CHANNELS_PER_SENSOR * sensor, CHANNELS_PER_SENSOR * (sensor + 1))


def apply_sensor_drop(x, sensors):
    """Zero all channels of the listed sensors; works on (n, 24, T) frames, (24, N) signals or a FrameTensor."""
    sensors = set(int(s) for s in sensors)
    if not sensors <= set(range(N_SENSORS)):
        raise ValueError(f"sensors must be a subset of 0..{N_SENSORS - 1}")
    if isinstance(x, FrameTensor):
        return FrameTensor(apply_sensor_drop(x.values, sensors), x.frame_hop, x.short_recording)
    out = np.array(x, copy=True)
    for s in sensors:
        out[..., _rows(s), :] = 0
    return out


def burst_mask(n_samples: int, rate: float, burst_len: int, rng: np.random.Generator) -> np.ndarray:
    """(4, n_samples) boolean loss mask; each aligned burst of each sensor is lost with probability ``rate``."""
    n_bursts = -(-n_samples // burst_len)
    lost = rng.random((N_SENSORS, n_bursts)) < rate
    return np.repeat(lost, burst_len, axis=1)[:, :n_samples]


def apply_packet_loss(x, rate: float, burst_len: int = SAMPLES_PER_PACKET, seed=0, hop: int = FRAME_HOP):
    """Zero aligned ``burst_len``-sample bursts per sensor on the recording timeline.

    A (24, N) signal is masked directly. For (n, 24, T) frames the bursts are
    drawn on the underlying recording (frames start every ``hop`` samples)
    so overlapping frames lose the same samples.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    if burst_len < 1:
        raise ValueError("burst_len must be at least 1")
    if isinstance(x, FrameTensor):
        return FrameTensor(apply_packet_loss(x.values, rate, burst_len, seed, x.frame_hop), x.frame_hop, x.short_recording)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    arr = np.asarray(x)
    if arr.ndim == 2:
        mask = burst_mask(arr.shape[1], rate, burst_len, rng)
        keep = np.repeat(~mask, CHANNELS_PER_SENSOR, axis=0)
        return arr * keep
    if arr.ndim != 3:
        raise ValueError("expected (24, N) signal or (n, 24, T) frames")
    n, _, t = arr.shape
    if n == 0:
        return arr.copy()
    if hop % burst_len:
        raise ValueError(f"frame hop {hop} is not a multiple of burst length {burst_len}")
    total = (n - 1) * hop + t
    mask = burst_mask(total, rate, burst_len, rng)
    idx = np.arange(n)[:, None] * hop + np.arange(t)[None, :]  # (n, t)
    keep = ~mask[:, idx]  # (4, n, t)
    keep = np.repeat(keep.transpose(1, 0, 2), CHANNELS_PER_SENSOR, axis=1)
    return arr * keep


# -------------------------------------------------------------------- suite

@dataclass
class Evaluated:
    """A trained system with the recordings it must be tested on."""

    name: str
    fold: int
    system: System
    test_ids: list[str]
    seq_len: int = 100  # sequence length used when the system was evaluated in training


def _fold_uwaf(system: System, data: Dataset, ids, transform, seq_len: int) -> float:
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for k, rid in enumerate(ids):
        i = data.index(rid)
        frames = transform(data.frames[i], k)
        cm += confusion_matrix(data.labels[i], system.predict(frames, seq_len))
    return uwaf(cm)[0]


def condition_variants(cond: NoiseCondition, repeats: int):
    """(combination label, transform) pairs averaged for one condition."""
    if cond.kind == "clean":
        return [("-", lambda f, k: f)]
    if cond.kind == "sensor_drop":
        combos = itertools.combinations(range(N_SENSORS), cond.sensors_dropped)
        return [("+".join(map(str, c)), (lambda c: lambda f, k: apply_sensor_drop(f, c))(c)) for c in combos]
    out = []
    for r in range(repeats):
        def tf(f, k, r=r):
            return apply_packet_loss(f, cond.loss_rate, cond.burst_len, seed=np.random.SeedSequence([r, k]).generate_state(1)[0])
        out.append((f"r{r}", tf))
    return out


def robustness_suite(models: list[Evaluated], data: Dataset, conditions=DEFAULT_CONDITIONS, repeats: int = 5) -> list[dict]:
    """UWAF per model, condition and combination/repeat, averaged over folds, plus a ``mean`` row per condition.

    Models sharing a ``name`` are the folds of one system; each is evaluated on its own test recordings.
    """
    by_name: dict[str, list[Evaluated]] = {}
    for m in models:
        by_name.setdefault(m.name, []).append(m)
    rows = []
    for name, folds in by_name.items():
        clean = float(np.mean([_fold_uwaf(m.system, data, m.test_ids, lambda f, k: f, m.seq_len) for m in folds]))
        rows.append(dict(model=name, condition="clean", severity="none", combination="mean", uwaf=clean, delta_vs_clean=0.0))
        for cond in conditions:
            if cond.kind == "clean":
                continue
            vals = []
            for combo, tf in condition_variants(cond, repeats):
                u = float(np.mean([_fold_uwaf(m.system, data, m.test_ids, tf, m.seq_len) for m in folds]))
                vals.append(u)
                rows.append(dict(model=name, condition=cond.label, severity=cond.severity, combination=combo, uwaf=u, delta_vs_clean=u - clean))
            mean = float(np.mean(vals))
            rows.append(dict(model=name, condition=cond.label, severity=cond.severity, combination="mean", uwaf=mean, delta_vs_clean=mean - clean))
    return rows


def summary(rows: list[dict]) -> dict[tuple[str, str], float]:
    """{(model, condition): mean uwaf} from suite rows."""
    return {(r["model"], r["condition"]): r["uwaf"] for r in rows if r["combination"] == "mean"}
