"""Cross-validated training, early stopping, evaluation and profiling."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_batch, dropout_mask
from .autodiff import Tensor, adam_step, cross_entropy_loss, no_grad, reshape
from .encoders import EncoderSpec
from .metrics import confusion_matrix, ranksum_test, uwaf  # noqa: F401  (re-exported)
from .model import System
from .preprocess import preprocess
from .recording_io import RecordingFormatError, read_labels, read_recording
from .timeseries import CLASS_NAMES, N_CLASSES, TimeSeriesSpec


class DataError(ValueError):
    """Missing or inconsistent recordings / labels."""


# ------------------------------------------------------------------- config

def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [_parse_value(t) for t in text.split(",") if t.strip()]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    return text


def _format_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, str):
        return v
    return json.dumps(v)


@dataclass(frozen=True)
class ExperimentConfig:
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    timeseries: TimeSeriesSpec = field(default_factory=TimeSeriesSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    minibatch_len: int = 100
    max_epochs: int = 250
    patience: int = 30
    folds: int = 7
    repeats: int = 3
    seed: int = 0
    val_every: int = 5
    seqs_per_step: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        if self.minibatch_len < 1:
            raise ValueError("minibatch_len must be at least 1")
        if self.folds < 2 or self.repeats < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("folds >= 2, repeats >= 1, max_epochs >= 1 and patience >= 1 required")
        if self.val_every < 2 or self.seqs_per_step < 1:
            raise ValueError("val_every >= 2 and seqs_per_step >= 1 required")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid optimizer settings")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def system_name(self) -> str:
        return f"{self.encoder.kind}+{self.timeseries.kind}"

    def with_(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def _scalars(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name not in ("encoder", "timeseries", "augment")}

    def to_dict(self) -> dict:
        return {
            "experiment": self._scalars(),
            "encoder": self.encoder.to_dict(),
            "timeseries": self.timeseries.to_dict(),
            "augment": self.augment.to_dict(),
        }

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True, default=list).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"experiment", "encoder", "timeseries", "augment"}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown config section(s): {sorted(bad)}")
        scalars = dict(d.get("experiment", {}))
        names = {f.name for f in dataclasses.fields(cls)} - known
        bad = set(scalars) - names
        if bad:
            raise ValueError(f"unknown experiment option(s): {sorted(bad)}")
        for sec, typ in (("encoder", EncoderSpec), ("timeseries", TimeSeriesSpec), ("augment", AugmentConfig)):
            allowed = {f.name for f in dataclasses.fields(typ)}
            bad = set(d.get(sec, {})) - allowed
            if bad:
                raise ValueError(f"unknown {sec} option(s): {sorted(bad)}")
        aug = dict(d.get("augment", {}))
        if isinstance(aug.get("enabled"), list):
            aug["enabled"] = ",".join(aug["enabled"])
        return cls(
            encoder=EncoderSpec.from_dict(_tuple_fields(d.get("encoder", {}), EncoderSpec)),
            timeseries=TimeSeriesSpec.from_dict(_tuple_fields(d.get("timeseries", {}), TimeSeriesSpec)),
            augment=AugmentConfig.from_dict(aug),
            **scalars,
        )

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for sec, values in self.to_dict().items():
            cp[sec] = {k: _format_value(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ValueError(f"malformed config: {exc}") from exc
        d = {sec: {k: _parse_value(v) for k, v in cp[sec].items()} for sec in cp.sections()}
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_ini(Path(path).read_text())


def _tuple_fields(d: dict, typ) -> dict:
    """Lists become tuples; a bare number for a tuple-valued field becomes a 1-tuple."""
    tuple_fields = {f.name for f in dataclasses.fields(typ) if isinstance(f.default, tuple)}
    out = {}
    for k, v in d.items():
        if isinstance(v, list):
            v = tuple(v)
        elif k in tuple_fields and isinstance(v, (int, float)):
            v = (v,)
        out[k] = v
    return out


# --------------------------------------------------------------------- data

@dataclass
class Dataset:
    ids: list[str]
    frames: list[np.ndarray]  # (n_i, 24, 120) float32
    labels: list[np.ndarray]  # (n_i,)

    def __post_init__(self):
        if not (len(self.ids) == len(self.frames) == len(self.labels)):
            raise DataError("ids, frames and labels differ in length")
        for rid, f, l in zip(self.ids, self.frames, self.labels):
            if len(f) != len(l):
                raise DataError(f"{rid}: {len(f)} frames but {len(l)} labels")

    def index(self, rid: str) -> int:
        return self.ids.index(rid)

    @classmethod
    def from_corpus(cls, corpus) -> "Dataset":
        frames = [preprocess(r).values.astype(np.float32) for r in corpus.recordings]
        return cls(list(corpus.ids), frames, [np.asarray(l) for l in corpus.labels])


RECORDING_SUFFIXES = (".imurec", ".csv", ".txt")
NON_RECORDING_FILES = ("manifest.txt",)


def load_dataset(data_dir) -> Dataset:
    """Read every recording in ``data_dir`` with its ``.labels`` file and preprocess it."""
    d = Path(data_dir)
    if not d.is_dir():
        raise DataError(f"data directory {d} does not exist")
    files = sorted(p for p in d.iterdir() if p.suffix in RECORDING_SUFFIXES and p.name not in NON_RECORDING_FILES)
    if not files:
        raise DataError(f"no recordings found in {d}")
    ids, frames, labels = [], [], []
    for p in files:
        lab_path = p.with_suffix(".labels")
        if not lab_path.exists():
            raise DataError(f"missing label file {lab_path.name} for {p.name}")
        try:
            rec = read_recording(p)
            lab = read_labels(lab_path)
            fr = preprocess(rec).values.astype(np.float32)
        except (RecordingFormatError, ValueError) as exc:
            raise DataError(f"{p.name}: {exc}") from exc
        if len(fr) != len(lab):
            raise DataError(f"{p.name}: {len(fr)} frames but {len(lab)} labels")
        ids.append(p.stem)
        frames.append(fr)
        labels.append(lab)
    return Dataset(ids, frames, labels)


# -------------------------------------------------------------------- folds

@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[str, ...], ...]
    val_every: int = 5

    def test_ids(self, k: int) -> tuple[str, ...]:
        return self.folds[k]

    def train_ids(self, k: int) -> list[str]:
        return [r for i, f in enumerate(self.folds) if i != k for r in f]

    def validation_indices(self, n_minibatches: int) -> list[int]:
        """Every ``val_every``-th minibatch of a recording (indices val_every-1, 2*val_every-1, ...)."""
        return [i for i in range(n_minibatches) if i % self.val_every == self.val_every - 1]

    def to_dict(self) -> dict:
        return {"folds": [list(f) for f in self.folds], "val_every": self.val_every}


def make_folds(recording_ids, k: int, seed: int = 0, val_every: int = 5) -> FoldPlan:
    """Shuffle recordings with ``seed`` and split them into ``k`` near-equal groups."""
    ids = list(recording_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("recording ids must be unique")
    if not 1 <= k <= len(ids):
        raise ValueError(f"cannot make {k} folds from {len(ids)} recordings")
    order = np.random.default_rng(seed).permutation(len(ids))
    groups = np.array_split(order, k)
    return FoldPlan(tuple(tuple(ids[i] for i in g) for g in groups), val_every)


def make_minibatches(frames: np.ndarray, labels: np.ndarray, length: int = 100) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous non-overlapping segments; the remainder becomes a short final minibatch."""
    if len(frames) != len(labels):
        raise ValueError("frames and labels must be aligned")
    if length < 1:
        raise ValueError("length must be positive")
    return [(frames[i : i + length], labels[i : i + length]) for i in range(0, len(frames), length)]


def split_minibatches(data: Dataset, ids, plan: FoldPlan, length: int):
    train, val = [], []
    for rid in ids:
        i = data.index(rid)
        mbs = make_minibatches(data.frames[i], data.labels[i], length)
        vset = set(plan.validation_indices(len(mbs)))
        for j, mb in enumerate(mbs):
            (val if j in vset else train).append(mb)
    return train, val


# --------------------------------------------------------------- training

class EarlyStopping:
    """Track the best validation loss; ``stop`` once ``patience`` epochs pass without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, loss: float) -> bool:
        self.epoch += 1
        if loss < self.best:
            self.best, self.best_epoch = loss, self.epoch
            return True
        return False

    @property
    def stop(self) -> bool:
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class FitResult:
    best_epoch: int
    epochs_run: int
    best_val_loss: float
    train_losses: list[float]
    val_losses: list[float]
    epoch_seconds: list[float]
    diverged: bool = False


def _groups(batches, spp: int, rng: np.random.Generator) -> list[list[int]]:
    order = rng.permutation(len(batches))
    if spp == 1:
        return [[int(i)] for i in order]
    by_len: dict[int, list[int]] = {}
    for i in order:
        by_len.setdefault(len(batches[i][1]), []).append(int(i))
    groups = [g[j : j + spp] for g in by_len.values() for j in range(0, len(g), spp)]
    return [groups[i] for i in rng.permutation(len(groups))]


def batch_loss(system: System, batches, group_size: int = 8) -> float:
    """Mean per-frame cross-entropy over ``batches`` without augmentation."""
    total, n = 0.0, 0
    with no_grad():
        for group in _groups(batches, group_size, np.random.default_rng(0)):
            X = np.stack([batches[i][0] for i in group])
            y = np.concatenate([batches[i][1] for i in group])
            logits = system.logits(X).data.reshape(-1, N_CLASSES)
            loss = cross_entropy_loss(Tensor(logits), y).data
            total += float(loss) * len(y)
            n += len(y)
    return total / max(n, 1)


def train_step(system: System, X: np.ndarray, y: np.ndarray, cfg: ExperimentConfig, rng: np.random.Generator) -> float:
    """One Adam update on sequences ``X`` (B, T, 24, 120) with labels ``y`` (B, T)."""
    aug = cfg.augment
    if aug.enabled - {"dr2"}:
        X = np.stack([augment_batch(x, aug, rng) for x in X])
    mask = None
    if aug.uses("dr2"):
        mask = dropout_mask((*X.shape[:2], cfg.encoder.bottleneck_size), aug.bottleneck_dropout_p, rng)
    logits = system.logits(X, bottleneck_mask=mask)
    loss = cross_entropy_loss(reshape(logits, (-1, N_CLASSES)), y.reshape(-1))
    value = float(loss.data)
    if not math.isfinite(value):
        return value
    loss.backward()
    adam_step(system.store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return value


def fit(system: System, train, val, cfg: ExperimentConfig, rng: np.random.Generator, max_epochs: int | None = None) -> FitResult:
    """Adam on mean cross-entropy with early stopping; restores the best-validation parameters.

    Without validation batches the training loss drives early stopping.
    """
    max_epochs = max_epochs or cfg.max_epochs
    es = EarlyStopping(cfg.patience)
    best_state = system.state()
    res = FitResult(0, 0, math.inf, [], [], [])
    for _ in range(max_epochs):
        t0 = time.perf_counter()
        tot, n = 0.0, 0
        for group in _groups(train, cfg.seqs_per_step, rng):
            X = np.stack([train[i][0] for i in group])
            y = np.stack([train[i][1] for i in group])
            loss = train_step(system, X, y, cfg, rng)
            if not math.isfinite(loss):
                res.diverged = True
                break
            tot += loss * y.size
            n += y.size
        if res.diverged:
            break
        train_loss = tot / max(n, 1)
        val_loss = batch_loss(system, val) if val else train_loss
        res.epoch_seconds.append(time.perf_counter() - t0)
        res.train_losses.append(train_loss)
        res.val_losses.append(val_loss)
        res.epochs_run += 1
        if not math.isfinite(val_loss):
            res.diverged = True
            break
        if es.update(val_loss):
            best_state = system.state()
        if es.stop:
            break
    system.load_state(best_state)
    res.best_epoch, res.best_val_loss = es.best_epoch, es.best
    return res


# --------------------------------------------------------------- experiment

def job_seeds(seed: int, fold: int, repeat: int) -> tuple[int, np.random.Generator]:
    ss = np.random.SeedSequence([seed, fold, repeat])
    return int(ss.generate_state(1)[0] % (2**31)), np.random.default_rng(ss)


@dataclass
class FoldResult:
    fold: int
    repeat: int
    test_ids: list[str]
    confusion: np.ndarray
    uwaf: float
    f1: np.ndarray
    fit: FitResult
    param_count: int
    inference_seconds: float
    state: dict | None = None
    input_scale: np.ndarray | None = None

    def row(self, system_name: str) -> dict:
        return {
            "system": system_name,
            "fold": self.fold,
            "repeat": self.repeat,
            "test_ids": list(self.test_ids),
            "uwaf": None if self.fit.diverged else self.uwaf,
            "per_class_f1": None if self.fit.diverged else [float(v) for v in self.f1],
            "confusion": self.confusion.tolist(),
            "best_epoch": self.fit.best_epoch,
            "epochs_run": self.fit.epochs_run,
            "best_val_loss": self.fit.best_val_loss if math.isfinite(self.fit.best_val_loss) else None,
            "diverged": self.fit.diverged,
            "param_count": self.param_count,
        }


def build_system(cfg: ExperimentConfig, seed: int) -> System:
    return System(cfg.encoder, cfg.timeseries, seed=seed, dtype=np.dtype(cfg.dtype))


def evaluate(system: System, data: Dataset, ids, seq_len: int = 100) -> np.ndarray:
    """Confusion matrix over the frames of recordings ``ids``."""
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for rid in ids:
        i = data.index(rid)
        cm += confusion_matrix(data.labels[i], system.predict(data.frames[i], seq_len))
    return cm


def run_fold(cfg: ExperimentConfig, data: Dataset, plan: FoldPlan, fold: int, repeat: int, keep_state: bool = True) -> FoldResult:
    init_seed, rng = job_seeds(cfg.seed, fold, repeat)
    system = build_system(cfg, init_seed)
    train, val = split_minibatches(data, plan.train_ids(fold), plan, cfg.minibatch_len)
    if not train:
        raise DataError(f"fold {fold} has no training minibatches")
    system.fit_input_scale(np.concatenate([x for x, _ in train]))
    fr = fit(system, train, val, cfg, rng)
    test = list(plan.test_ids(fold))
    t0 = time.perf_counter()
    cm = evaluate(system, data, test, cfg.minibatch_len)
    inf_s = time.perf_counter() - t0
    if fr.diverged or cm.sum() == 0:
        u, f1 = float("nan"), np.zeros(N_CLASSES)
    else:
        u, f1 = uwaf(cm)
    return FoldResult(
        fold, repeat, test, cm, u, f1, fr, system.param_count(), inf_s,
        state=system.state() if keep_state else None, input_scale=system.input_scale.copy(),
    )


@dataclass
class ExperimentReport:
    system: str
    config: dict
    config_hash: str
    plan: dict
    rows: list[dict]
    timings: list[dict] = field(default_factory=list)

    @property
    def uwafs(self) -> list[float]:
        return [r["uwaf"] for r in self.rows if r["uwaf"] is not None]

    @property
    def mean_uwaf(self) -> float:
        u = self.uwafs
        return float(np.mean(u)) if u else float("nan")

    def to_json(self) -> str:
        """Deterministic report content; wall-clock timings live in ``timings_json``."""
        body = {
            "system": self.system,
            "config": self.config,
            "config_hash": self.config_hash,
            "plan": self.plan,
            "class_names": list(CLASS_NAMES),
            "mean_uwaf": self.mean_uwaf if self.uwafs else None,
            "rows": self.rows,
        }
        return json.dumps(body, indent=1, sort_keys=True)

    def timings_json(self) -> str:
        return json.dumps({"system": self.system, "timings": self.timings}, indent=1, sort_keys=True)

    CSV_HEADER = ("system", "fold", "repeat", "uwaf", *(f"f1_{i}" for i in range(N_CLASSES)), "best_epoch", "epochs_run", "diverged", "param_count", "test_ids")

    def csv_rows(self) -> list[list]:
        out = []
        for r in self.rows:
            f1 = r["per_class_f1"] or [""] * N_CLASSES
            out.append([r["system"], r["fold"], r["repeat"], "" if r["uwaf"] is None else repr(r["uwaf"]),
                        *[repr(v) if v != "" else "" for v in f1], r["best_epoch"], r["epochs_run"],
                        int(r["diverged"]), r["param_count"], ";".join(r["test_ids"])])
        return out

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(d["system"], d["config"], d["config_hash"], d["plan"], d["rows"])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    plan: FoldPlan
    folds: list[FoldResult]
    report: ExperimentReport

    def systems(self) -> list[tuple[FoldResult, System]]:
        """Rebuild a trained System per fold/repeat from the kept states."""
        out = []
        for fr in self.folds:
            if fr.state is None:
                continue
            init_seed, _ = job_seeds(self.config.seed, fr.fold, fr.repeat)
            s = build_system(self.config, init_seed)
            s.load_state(fr.state)
            s.input_scale = fr.input_scale.copy()
            out.append((fr, s))
        return out


_WORKER: dict = {}


def _worker_init(cfg, data, plan):
    _WORKER.update(cfg=cfg, data=data, plan=plan)


def _worker_run(job):
    fold, repeat = job
    return run_fold(_WORKER["cfg"], _WORKER["data"], _WORKER["plan"], fold, repeat)


def run_experiment(cfg: ExperimentConfig, data: Dataset, plan: FoldPlan | None = None, jobs: int = 1,
                   folds: list[int] | None = None, progress=None) -> ExperimentResult:
    """k-fold x repeats; ``folds`` restricts the run to a subset of fold indices."""
    if cfg.folds > len(data.ids):
        raise ValueError(f"{cfg.folds} folds requested but only {len(data.ids)} recordings")
    plan = plan or make_folds(data.ids, cfg.folds, cfg.seed, cfg.val_every)
    fold_idx = list(range(len(plan.folds))) if folds is None else list(folds)
    work = [(f, r) for f in fold_idx for r in range(cfg.repeats)]
    results: list[FoldResult] = []
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init, initargs=(cfg, data, plan)) as ex:
            for res in ex.map(_worker_run, work):
                results.append(res)
                if progress:
                    progress(res)
    else:
        for f, r in work:
            res = run_fold(cfg, data, plan, f, r)
            results.append(res)
            if progress:
                progress(res)
    report = ExperimentReport(
        cfg.system_name, cfg.to_dict(), cfg.hash(), plan.to_dict(),
        [fr.row(cfg.system_name) for fr in results],
        [{"fold": fr.fold, "repeat": fr.repeat, "epoch_seconds": fr.fit.epoch_seconds, "inference_seconds": fr.inference_seconds} for fr in results],
    )
    return ExperimentResult(cfg, plan, results, report)


# ------------------------------------------------------------------ profile

def profile(cfg: ExperimentConfig, data: Dataset, epochs: int = 3, fold: int = 0, max_train_batches: int | None = None) -> dict:
    """Parameter count, median per-epoch training time and test-set inference time."""
    if epochs < 3:
        raise ValueError("profile needs at least 3 epochs")
    plan = make_folds(data.ids, min(cfg.folds, len(data.ids)), cfg.seed, cfg.val_every)
    init_seed, rng = job_seeds(cfg.seed, fold, 0)
    system = build_system(cfg, init_seed)
    train, _ = split_minibatches(data, plan.train_ids(fold), plan, cfg.minibatch_len)
    if max_train_batches:
        train = train[:max_train_batches]
    system.fit_input_scale(np.concatenate([x for x, _ in train]))
    times = []
    for _ in range(epochs):
        t0 = time.perf_counter()
        for group in _groups(train, cfg.seqs_per_step, rng):
            X = np.stack([train[i][0] for i in group])
            y = np.stack([train[i][1] for i in group])
            train_step(system, X, y, cfg, rng)
        times.append(time.perf_counter() - t0)
    t0 = time.perf_counter()
    evaluate(system, data, plan.test_ids(fold), cfg.minibatch_len)
    return {
        "system": cfg.system_name,
        "param_count": system.param_count(),
        "per_epoch_seconds": float(np.median(times)),
        "inference_seconds": time.perf_counter() - t0,
        "epoch_times": times,
    }
