"""``imuhar`` command: datagen, train, eval, profile and rerun.

Exit codes: 0 success, 1 refused or failed for another reason, 2 config
error, 3 data error, 4 training diverged, 5 rerun output differs.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import os
import platform
import sys
import time
import zipfile
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import GeneratorConfig, config_hash, corpus, write_corpus
from .encoders import ENCODER_KINDS
from .harness import (
    DataError,
    ExperimentConfig,
    ExperimentReport,
    _parse_value,
    job_seeds,
    load_dataset,
    profile,
    run_experiment,
)
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .recording_io import RecordingFormatError
from .robustness import SUITE_COLUMNS, Evaluated, parse_noise, robustness_suite, summary
from .timeseries import TS_KINDS

EXIT_OK, EXIT_REFUSED, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5
OUT_ENV = "IMUHAR_OUT"
MANIFEST_NAME = "run_manifest.json"
PROFILE_HEADER = ("system", "param_count", "per_epoch_seconds", "inference_seconds")
SWEEP_HEADER = ("system", "bottleneck_features", "features_per_sensor", "compression", "param_count",
                "per_epoch_seconds", "inference_seconds")
SIZES_HEADER = ("system", "bottleneck_features", "features_per_sensor", "compression", "param_count")
SWEEP_PER_SENSOR = (40, 20, 10)
SAMPLES_PER_SENSOR_FRAME = 720  # 6 channels x 120 samples


class ConfigError(ValueError):
    pass


class Refused(RuntimeError):
    pass


# ------------------------------------------------------------------ helpers

def write_atomic(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data.encode() if isinstance(data, str) else data)
    os.replace(tmp, path)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def file_digest(path: Path) -> str:
    """sha256 of a file; .npz archives are hashed by entry content so zip timestamps do not matter."""
    h = hashlib.sha256()
    if path.suffix == ".npz":
        with zipfile.ZipFile(path) as z:
            for name in sorted(z.namelist()):
                h.update(name.encode())
                h.update(z.read(name))
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def data_fingerprint(data_dir: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(data_dir.iterdir()):
        if p.is_file():
            h.update(p.name.encode())
            h.update(file_digest(p).encode())
    return h.hexdigest()[:16]


def default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def resolve_out(out: str | None, command: str, key: str) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get(OUT_ENV, "runs")) / f"{command}-{key}"


def prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise Refused(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def read_ini_section(path, section: str) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    extra = set(cp.sections()) - {section}
    if extra:
        raise ConfigError(f"{path}: unexpected section(s) {sorted(extra)}; expected [{section}]")
    return {k: _parse_value(v) for k, v in cp[section].items()} if cp.has_section(section) else {}


def load_experiment_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        return ExperimentConfig.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def systems_grid(cfg: ExperimentConfig, encoder: str | None, timeseries: str | None) -> list[ExperimentConfig]:
    encs = ENCODER_KINDS if encoder == "all" else [encoder or cfg.encoder.kind]
    tss = TS_KINDS if timeseries == "all" else [timeseries or cfg.timeseries.kind]
    try:
        return [cfg.with_(encoder=dataclasses.replace(cfg.encoder, kind=e), timeseries=dataclasses.replace(cfg.timeseries, kind=t))
                for e in encs for t in tss]
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    try:
        if args.seed is not None:
            cfg = cfg.with_(seed=args.seed)
        if getattr(args, "augment", None) is not None:
            cfg = cfg.with_(augment=dataclasses.replace(cfg.augment, enabled=args.augment))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def versions() -> dict:
    return {"imuhar": __version__, "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(out: Path, command: str, args: dict, config: dict, chash: str, seeds, outputs: list[Path],
                   seconds: float, extra: dict | None = None) -> dict:
    man = {
        "command": command,
        "args": args,
        "config": config,
        "config_hash": chash,
        "seeds": seeds,
        "versions": versions(),
        "outputs": {str(p.relative_to(out)): file_digest(p) for p in sorted(outputs)},
        "timing": {"wall_seconds": round(seconds, 3)},
    }
    man.update(extra or {})
    write_atomic(out / MANIFEST_NAME, json.dumps(man, indent=1, sort_keys=True) + "\n")
    return man


def _say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ----------------------------------------------------------------- commands

def run_datagen(config: dict, args: dict, out: Path) -> tuple[dict, str, list[Path], dict]:
    try:
        cfg = GeneratorConfig.from_dict(config)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    try:
        c = corpus(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_corpus(c, out, fmt=args.get("format", "imurec"))
    outputs = [p for p in out.iterdir() if p.is_file() and p.name != MANIFEST_NAME]
    seeds = {"seed": cfg.seed, "recordings": dict(zip(c.ids, c.seeds))}
    _say(f"wrote {len(c.ids)} recordings to {out}")
    return cfg.to_dict(), config_hash(cfg.to_dict()), outputs, seeds


def cmd_datagen(ns) -> int:
    config = read_ini_section(ns.config, "generator") if ns.config else {}
    if ns.seed is not None:
        config["seed"] = ns.seed
    try:
        key = config_hash(GeneratorConfig.from_dict(config).to_dict())
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    out = resolve_out(ns.out, "datagen", key)
    prepare_out(out, ns.force)
    t0 = time.perf_counter()
    args = {"format": ns.format}
    cfg, h, outputs, seeds = run_datagen(config, args, out)
    write_manifest(out, "datagen", args, cfg, h, seeds, outputs, time.perf_counter() - t0)
    print(out)
    return EXIT_OK


def run_train(config: dict, args: dict, out: Path) -> tuple[list[Path], dict, bool]:
    base = ExperimentConfig.from_dict(config)
    data = load_dataset(args["data"])
    outputs, seeds, diverged = [], {}, False
    grid = systems_grid(base, args.get("encoder"), args.get("timeseries"))
    for cfg in grid:
        sdir = out / cfg.system_name.replace("+", "_") if len(grid) > 1 else out
        _say(f"training {cfg.system_name} ({cfg.folds} folds x {cfg.repeats} repeats)")

        def progress(fr, name=cfg.system_name):
            u = "diverged" if fr.fit.diverged else f"uwaf {fr.uwaf:.4f}"
            _say(f"  {name} fold {fr.fold} repeat {fr.repeat}: {u} after {fr.fit.epochs_run} epochs")

        res = run_experiment(cfg, data, jobs=args.get("jobs", 1), folds=args.get("only_folds"), progress=progress)
        rep = res.report
        write_atomic(sdir / "report.json", rep.to_json() + "\n")
        write_atomic(sdir / "report.csv", csv_text(ExperimentReport.CSV_HEADER, rep.csv_rows()))
        write_atomic(sdir / "timings.json", rep.timings_json() + "\n")
        outputs += [sdir / "report.json", sdir / "report.csv"]
        for fr, system in res.systems():
            path = sdir / "checkpoints" / f"fold{fr.fold}_rep{fr.repeat}.npz"
            path.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(path, system, extra={
                "system": cfg.system_name, "fold": fr.fold, "repeat": fr.repeat, "test_ids": list(fr.test_ids),
                "config_hash": cfg.hash(), "uwaf": None if fr.fit.diverged else fr.uwaf, "seq_len": cfg.minibatch_len,
            })
            outputs.append(path)
            seeds[f"{cfg.system_name}/fold{fr.fold}_rep{fr.repeat}"] = job_seeds(cfg.seed, fr.fold, fr.repeat)[0]
        diverged |= any(fr.fit.diverged for fr in res.folds)
        if rep.uwafs:
            _say(f"{cfg.system_name}: mean UWAF {rep.mean_uwaf:.4f}")
    return outputs, seeds, diverged


def _train_args(ns) -> dict:
    only = None
    if ns.only_folds:
        try:
            only = [int(v) for v in ns.only_folds.split(",")]
        except ValueError as exc:
            raise ConfigError(f"--only-folds expects comma-separated integers: {exc}") from exc
    return {
        "data": str(Path(ns.data).resolve()),
        "encoder": ns.encoder,
        "timeseries": ns.timeseries,
        "only_folds": only,
        "jobs": ns.jobs or default_jobs(),
    }


def _check_data(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"data directory {p} does not exist")
    return p


def cmd_train(ns) -> int:
    cfg = apply_overrides(load_experiment_config(ns.config), ns)
    args = _train_args(ns)
    grid = systems_grid(cfg, args["encoder"], args["timeseries"])
    if args["only_folds"] and not all(0 <= f < cfg.folds for f in args["only_folds"]):
        raise ConfigError(f"--only-folds entries must lie in [0, {cfg.folds})")
    data_dir = _check_data(ns.data)
    out = resolve_out(ns.out, "train", config_hash({"c": cfg.to_dict(), "g": [g.system_name for g in grid]}))
    prepare_out(out, ns.force)
    t0 = time.perf_counter()
    outputs, seeds, diverged = run_train(cfg.to_dict(), args, out)
    write_manifest(out, "train", args, cfg.to_dict(), cfg.hash(), {"seed": cfg.seed, "jobs": seeds}, outputs,
                   time.perf_counter() - t0, {"data_fingerprint": data_fingerprint(data_dir)})
    print(out)
    if diverged:
        _say("warning: at least one fold/repeat diverged (non-finite loss)")
        return EXIT_DIVERGED
    return EXIT_OK


def _checkpoint_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(path.rglob("*.npz"))
        if not files:
            raise ConfigError(f"no checkpoints under {path}")
        return files
    if not path.exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    return [path]


def run_eval(args: dict, out: Path) -> list[Path]:
    data = load_dataset(args["data"])
    models = []
    for p in _checkpoint_files(Path(args["checkpoint"])):
        systems, extra = load_checkpoint(p)
        ids = extra.get("test_ids") or list(data.ids)
        missing = [r for r in ids if r not in data.ids]
        if missing:
            raise DataError(f"{p.name}: test recordings {missing} not found in data")
        for s in systems:
            models.append(Evaluated(extra.get("system", s.name), int(extra.get("fold", 0)), s, ids, int(extra.get("seq_len", 100))))
    conds = [parse_noise(n) for n in args["noise"]]
    rows = robustness_suite(models, data, conds, repeats=args["repeats"])
    table = [[r[c] if not isinstance(r[c], float) else repr(r[c]) for c in SUITE_COLUMNS] for r in rows]
    write_atomic(out / "robustness.csv", csv_text(SUITE_COLUMNS, table))
    plot = [[m, c, repr(u)] for (m, c), u in summary(rows).items()]
    write_atomic(out / "plot_data.csv", csv_text(("series", "x", "y"), plot))
    for (m, c), u in summary(rows).items():
        _say(f"{m:24s} {c:18s} uwaf {u:.4f}")
    return [out / "robustness.csv", out / "plot_data.csv"]


def cmd_eval(ns) -> int:
    try:
        noise = [parse_noise(n).label for n in (ns.noise or [])]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if ns.repeats < 1:
        raise ConfigError("--repeats must be at least 1")
    data_dir = _check_data(ns.data)
    ckpt = Path(ns.checkpoint).resolve()
    args = {"checkpoint": str(ckpt), "data": str(data_dir.resolve()), "noise": noise, "repeats": ns.repeats}
    key = config_hash(args)
    out = resolve_out(ns.out, "eval", key)
    prepare_out(out, ns.force)
    t0 = time.perf_counter()
    outputs = run_eval(args, out)
    ck_digest = {str(p): file_digest(p) for p in _checkpoint_files(ckpt)}
    write_manifest(out, "eval", args, {}, key, {"packet_loss_repeats": list(range(ns.repeats))}, outputs,
                   time.perf_counter() - t0, {"data_fingerprint": data_fingerprint(data_dir), "checkpoints": ck_digest})
    print(out)
    return EXIT_OK


def compression(per_sensor: int) -> str:
    return f"{SAMPLES_PER_SENSOR_FRAME / per_sensor:g}:1"


def run_profile(config: dict, args: dict, out: Path) -> list[Path]:
    base = ExperimentConfig.from_dict(config)
    data = load_dataset(args["data"])
    kw = dict(epochs=args["epochs"], max_train_batches=args.get("max_batches"))
    rows = []
    for cfg in systems_grid(base, args.get("encoder"), args.get("timeseries")):
        p = profile(cfg, data, **kw)
        _say(f"{cfg.system_name:24s} params {p['param_count']:>9d}  epoch {p['per_epoch_seconds']:.2f}s")
        rows.append([p["system"], p["param_count"], repr(p["per_epoch_seconds"]), repr(p["inference_seconds"])])
    write_atomic(out / "profile.csv", csv_text(PROFILE_HEADER, rows))
    sweep, sizes = [], []
    if args.get("sweep", True):
        for fps in SWEEP_PER_SENSOR:
            try:
                enc = dataclasses.replace(base.encoder, kind="conv2d-si", bottleneck_size=4 * fps)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            cfg = base.with_(encoder=enc, timeseries=dataclasses.replace(base.timeseries, kind="wavenet"))
            p = profile(cfg, data, **kw)
            head = [p["system"], 4 * fps, fps, compression(fps), p["param_count"]]
            sizes.append(head)
            sweep.append(head + [repr(p["per_epoch_seconds"]), repr(p["inference_seconds"])])
            _say(f"sweep {4 * fps:>3d} features ({compression(fps)}): params {p['param_count']}")
    write_atomic(out / "bottleneck.csv", csv_text(SWEEP_HEADER, sweep))
    write_atomic(out / "sizes.csv", csv_text(SIZES_HEADER, sizes))
    return [out / "sizes.csv"]


def cmd_profile(ns) -> int:
    cfg = apply_overrides(load_experiment_config(ns.config), ns)
    if ns.epochs < 3:
        raise ConfigError("--epochs must be at least 3")
    data_dir = _check_data(ns.data)
    args = {"data": str(data_dir.resolve()), "encoder": ns.encoder, "timeseries": ns.timeseries, "epochs": ns.epochs,
            "max_batches": ns.max_batches, "sweep": not ns.no_sweep}
    systems_grid(cfg, ns.encoder, ns.timeseries)
    out = resolve_out(ns.out, "profile", config_hash({"c": cfg.to_dict(), "a": args}))
    prepare_out(out, ns.force)
    t0 = time.perf_counter()
    outputs = run_profile(cfg.to_dict(), args, out)
    write_manifest(out, "profile", args, cfg.to_dict(), cfg.hash(), {"seed": cfg.seed}, outputs, time.perf_counter() - t0,
                   {"data_fingerprint": data_fingerprint(data_dir)})
    print(out)
    return EXIT_OK


def cmd_rerun(ns) -> int:
    path = Path(ns.manifest)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        man = json.loads(path.read_text())
        command, args, config = man["command"], man["args"], man["config"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"unreadable run manifest {path}: {exc}") from exc
    out = Path(ns.out) if ns.out else path.parent.with_name(path.parent.name + "-rerun")
    prepare_out(out, ns.force)
    if ns.jobs and "jobs" in args:
        args = dict(args, jobs=ns.jobs)
    if "data_fingerprint" in man and data_fingerprint(_check_data(args["data"])) != man["data_fingerprint"]:
        raise DataError(f"data in {args['data']} changed since the original run")
    if command == "datagen":
        run_datagen(config, args, out)
    elif command == "train":
        run_train(config, args, out)
    elif command == "eval":
        run_eval(args, out)
    elif command == "profile":
        run_profile(config, args, out)
    else:
        raise ConfigError(f"unknown command {command!r} in manifest")
    same = True
    for rel, digest in sorted(man["outputs"].items()):
        p = out / rel
        ok = p.exists() and file_digest(p) == digest
        same &= ok
        print(f"{'identical' if ok else 'DIFFERS  '} {rel}")
    print(f"{len(man['outputs'])} outputs compared: {'all identical' if same else 'mismatch'}")
    return EXIT_OK if same else EXIT_MISMATCH


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imuhar", description="Multi-IMU movement classification experiments.")
    p.add_argument("--version", action="version", version=f"imuhar {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, data=True):
        if config:
            sp.add_argument("--config", help="INI config file")
        if data:
            sp.add_argument("--data", required=True, help="directory of recordings and .labels files")
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<command>-<hash>, or runs/...)")
        sp.add_argument("--force", action="store_true", help="write into a non-empty output directory")

    sp = sub.add_parser("datagen", help="generate a synthetic labelled corpus")
    common(sp, data=False)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--format", choices=("imurec", "csv"), default="imurec")
    sp.set_defaults(func=cmd_datagen)

    for name, func, help_ in (("train", cmd_train, "cross-validated training"), ("profile", cmd_profile, "sizes and timings")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--encoder", help=f"{', '.join(ENCODER_KINDS)} or all")
        sp.add_argument("--timeseries", help=f"{', '.join(TS_KINDS)} or all")
        sp.add_argument("--augment", help="comma list of dr1,dr2,rot,tw,ds (empty string disables)")
        sp.set_defaults(func=func)
        if name == "train":
            sp.add_argument("--jobs", type=int, help="parallel fold/repeat workers (default: available cores)")
            sp.add_argument("--only-folds", help="comma list of fold indices to run")
        else:
            sp.add_argument("--epochs", type=int, default=3)
            sp.add_argument("--max-batches", type=int, help="cap training minibatches per epoch")
            sp.add_argument("--no-sweep", action="store_true", help="skip the Conv2D-SI bottleneck sweep")

    sp = sub.add_parser("eval", help="robustness evaluation of trained checkpoints")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True, help=".npz checkpoint or a train output directory")
    sp.add_argument("--noise", action="append", help="sensor_drop:K or packet_loss:RATE (repeatable)")
    sp.add_argument("--repeats", type=int, default=5, help="packet-loss repeats")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("rerun", help="re-execute a run from its manifest and compare outputs")
    sp.add_argument("manifest", help=f"{MANIFEST_NAME} or the run directory")
    sp.add_argument("--out")
    sp.add_argument("--force", action="store_true")
    sp.add_argument("--jobs", type=int)
    sp.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except Refused as exc:
        _say(f"refused: {exc}")
        return EXIT_REFUSED
    except (ConfigError, CheckpointError) as exc:
        _say(f"config error: {exc}")
        return EXIT_CONFIG
    except (DataError, RecordingFormatError) as exc:
        _say(f"data error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
