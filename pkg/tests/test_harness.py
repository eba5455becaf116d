import json
import math

import numpy as np
import pytest

from imuhar.augment import AugmentConfig
from imuhar.encoders import EncoderSpec
from imuhar.harness import (
    DataError,
    Dataset,
    EarlyStopping,
    ExperimentConfig,
    ExperimentReport,
    batch_loss,
    build_system,
    fit,
    load_dataset,
    make_folds,
    make_minibatches,
    profile,
    run_experiment,
    split_minibatches,
)
from imuhar.metrics import uwaf
from imuhar.timeseries import TimeSeriesSpec

TINY_ENC = dict(bottleneck_size=8, dense_hidden=(8,), conv1d_channels=(4, 4, 4, 4), conv2d_channels=(2, 2, 2, 2),
                si_channels=(2, 2, 2), fc_hidden=8)
TINY_TS = dict(hidden_size=4, dense_hidden=6, residual_channels=4, skip_channels=4)


def tiny_config(enc="dense", ts="dense", **kw):
    base = dict(encoder=EncoderSpec(kind=enc, **TINY_ENC), timeseries=TimeSeriesSpec(kind=ts, **TINY_TS),
                lr=1e-2, max_epochs=3, patience=2, folds=3, repeats=1, minibatch_len=10, dtype="float64")
    base.update(kw)
    return ExperimentConfig(**base)


def toy_dataset(n_rec=6, frames_per=25, seed=0, n_classes=2):
    """Linearly separable toy data: the class shifts channel 0 by +/-1."""
    rng = np.random.default_rng(seed)
    ids, frames, labels = [], [], []
    for r in range(n_rec):
        lab = rng.integers(0, n_classes, frames_per)
        x = 0.1 * rng.standard_normal((frames_per, 24, 120))
        x[:, 0, :] += np.where(lab == 0, -1.0, 1.0)[:, None]
        ids.append(f"rec_{r:02d}")
        frames.append(x.astype(np.float32))
        labels.append(lab)
    return Dataset(ids, frames, labels)


# ------------------------------------------------------------------- folds

def test_22_recordings_7_folds_sizes():
    plan = make_folds([f"r{i}" for i in range(22)], 7, seed=3)
    assert sorted(len(f) for f in plan.folds) == [3, 3, 3, 3, 3, 3, 4]


def test_folds_partition_recordings():
    ids = [f"r{i}" for i in range(22)]
    plan = make_folds(ids, 7, seed=1)
    flat = [r for f in plan.folds for r in f]
    assert sorted(flat) == sorted(ids)
    for k in range(7):
        assert set(plan.train_ids(k)).isdisjoint(plan.test_ids(k))
        assert set(plan.train_ids(k)) | set(plan.test_ids(k)) == set(ids)


def test_leave_one_out_when_k_equals_n():
    plan = make_folds(["a", "b", "c", "d"], 4)
    assert all(len(f) == 1 for f in plan.folds)


def test_too_many_folds_rejected():
    with pytest.raises(ValueError):
        make_folds(["a", "b"], 3)


def test_folds_deterministic_per_seed():
    ids = [f"r{i}" for i in range(10)]
    assert make_folds(ids, 3, 5) == make_folds(ids, 3, 5)


# -------------------------------------------------------------- minibatches

def test_minibatches_250_frames():
    f = np.zeros((250, 24, 120))
    mbs = make_minibatches(f, np.arange(250), 100)
    assert [len(x) for x, _ in mbs] == [100, 100, 50]
    np.testing.assert_array_equal(np.concatenate([y for _, y in mbs]), np.arange(250))


def test_minibatches_short_recording():
    mbs = make_minibatches(np.zeros((99, 24, 120)), np.zeros(99), 100)
    assert [len(x) for x, _ in mbs] == [99]


def test_minibatches_keep_frame_label_alignment():
    f = np.arange(230)[:, None, None] * np.ones((1, 24, 120))
    lab = np.arange(230)
    for x, y in make_minibatches(f, lab, 100):
        np.testing.assert_array_equal(x[:, 0, 0], y)


def test_validation_is_every_fifth_minibatch_and_disjoint():
    data = toy_dataset(n_rec=2, frames_per=120)
    plan = make_folds(data.ids, 2, val_every=5)
    assert plan.validation_indices(12) == [4, 9]
    train, val = split_minibatches(data, data.ids, plan, 10)
    assert len(val) == 2 * 2 and len(train) == 2 * 10
    seen = {id(x) for x, _ in train}
    assert not any(id(x) in seen for x, _ in val)


# ---------------------------------------------------------- early stopping

def test_early_stopping_patience_two():
    es = EarlyStopping(2)
    stopped_at = None
    for loss in [1.0, 0.9, 0.9, 0.95, 0.8]:
        es.update(loss)
        if es.stop:
            stopped_at = es.epoch
            break
    # epoch 2 is best; epochs 3 and 4 bring no improvement
    assert es.best_epoch == 2
    assert stopped_at == 4


def test_early_stopping_resets_on_improvement():
    es = EarlyStopping(2)
    for loss in [1.0, 1.1, 0.5, 0.6]:
        es.update(loss)
    assert not es.stop and es.best_epoch == 3


def test_fit_restores_best_validation_parameters():
    data = toy_dataset(frames_per=60)
    cfg = tiny_config(lr=0.05, max_epochs=6, patience=6)
    plan = make_folds(data.ids, 3)
    train, val = split_minibatches(data, plan.train_ids(0), plan, 10)
    system = build_system(cfg, 0)
    system.fit_input_scale(np.concatenate([x for x, _ in train]))
    assert val
    res = fit(system, train, val, cfg, np.random.default_rng(0))
    assert res.best_val_loss == min(res.val_losses)
    assert res.val_losses[res.best_epoch - 1] == res.best_val_loss
    assert batch_loss(system, val) == pytest.approx(res.best_val_loss, rel=1e-12)


def test_toy_two_class_dense_dense_converges():
    data = toy_dataset(n_rec=4, frames_per=40)
    cfg = tiny_config(lr=1e-2, max_epochs=200, patience=200)
    train, _ = split_minibatches(data, data.ids, make_folds(data.ids, 2, val_every=10**6), 10)
    system = build_system(cfg, 1)
    system.fit_input_scale(np.concatenate([x for x, _ in train]))
    res = fit(system, train, [], cfg, np.random.default_rng(1))
    first = next(i for i, v in enumerate(res.train_losses) if v < 0.01)
    assert first < 200


def test_divergence_is_recorded_not_raised():
    data = toy_dataset()
    data.frames[0][:] = np.nan
    cfg = tiny_config()
    res = run_experiment(cfg, data)
    rows = res.report.rows
    bad = [r for r in rows if r["diverged"]]
    assert bad and all(r["uwaf"] is None for r in bad)
    assert len(rows) == 3


# -------------------------------------------------------------- experiment

@pytest.fixture(scope="module")
def small_run():
    data = toy_dataset(n_rec=6, frames_per=30, n_classes=3)
    cfg = tiny_config(enc="conv1d", ts="gru", repeats=2)
    return data, cfg, run_experiment(cfg, data)


def test_report_has_folds_times_repeats_rows(small_run):
    _, cfg, res = small_run
    assert len(res.report.rows) == cfg.folds * cfg.repeats


def test_report_uwaf_recomputable_from_confusion(small_run):
    _, _, res = small_run
    for row in res.report.rows:
        assert abs(uwaf(np.array(row["confusion"]))[0] - row["uwaf"]) <= 1e-12


def test_confusion_rows_match_test_frame_counts(small_run):
    data, _, res = small_run
    for row in res.report.rows:
        labels = np.concatenate([data.labels[data.index(r)] for r in row["test_ids"]])
        np.testing.assert_array_equal(np.array(row["confusion"]).sum(1), np.bincount(labels, minlength=7))


def test_test_recordings_never_trained_on(small_run):
    _, _, res = small_run
    for fr in res.folds:
        assert set(fr.test_ids).isdisjoint(res.plan.train_ids(fr.fold))


def test_rerun_bit_identical(small_run):
    data, cfg, res = small_run
    again = run_experiment(cfg, data)
    assert again.report.to_json() == res.report.to_json()


def test_parallel_jobs_match_serial(small_run):
    data, cfg, res = small_run
    par = run_experiment(cfg, data, jobs=2)
    assert par.report.to_json() == res.report.to_json()


def test_report_json_round_trip(small_run):
    _, _, res = small_run
    back = ExperimentReport.from_json(res.report.to_json())
    assert back.to_json() == res.report.to_json()
    assert json.loads(res.report.timings_json())["timings"]


def test_csv_rows_one_per_fold_repeat(small_run):
    _, cfg, res = small_run
    rows = res.report.csv_rows()
    assert len(rows) == cfg.folds * cfg.repeats
    assert all(len(r) == len(ExperimentReport.CSV_HEADER) for r in rows)


def test_repeats_use_distinct_seeds(small_run):
    _, _, res = small_run
    by_fold = {}
    for fr in res.folds:
        by_fold.setdefault(fr.fold, []).append(fr.state)
    for states in by_fold.values():
        a, b = states
        assert any(not np.array_equal(a[k], b[k]) for k in a)


def test_systems_rebuild_reproduces_predictions(small_run):
    data, _, res = small_run
    for fr, system in res.systems():
        from imuhar.harness import evaluate
        np.testing.assert_array_equal(evaluate(system, data, fr.test_ids, 10), fr.confusion)


def test_augmented_run_deterministic():
    data = toy_dataset(n_rec=4, frames_per=20)
    cfg = tiny_config(folds=2, augment=AugmentConfig(enabled="dr1,dr2,rot,tw,ds"))
    assert run_experiment(cfg, data).report.to_json() == run_experiment(cfg, data).report.to_json()


def test_more_folds_than_recordings_rejected():
    with pytest.raises(ValueError):
        run_experiment(tiny_config(folds=7), toy_dataset(n_rec=4))


# ------------------------------------------------------------------ config

def test_config_ini_round_trip():
    cfg = tiny_config(enc="conv2d-si", ts="wavenet", augment=AugmentConfig(enabled="ds,dr1"), seed=9)
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


def test_config_hash_changes_with_any_field():
    cfg = tiny_config()
    hashes = {cfg.hash(), cfg.with_(lr=0.02).hash(), cfg.with_(seed=1).hash(),
              cfg.with_(timeseries=TimeSeriesSpec(kind="gru", **TINY_TS)).hash()}
    assert len(hashes) == 4
    assert tiny_config().hash() == cfg.hash()


def test_config_unknown_key_rejected():
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_ini("[experiment]\nlearning_rate = 0.1\n")


def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.minibatch_len, cfg.max_epochs, cfg.patience, cfg.folds, cfg.repeats) == (100, 250, 30, 7, 3)


def test_config_invalid_values_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig(minibatch_len=0)


# -------------------------------------------------------------------- data

def test_load_dataset_missing_labels(tmp_path):
    from imuhar.datagen import GeneratorConfig, generate_recording
    from imuhar.recording_io import write_recording

    rec, _ = generate_recording(GeneratorConfig(duration_min=(0.1, 0.1)), 1)
    write_recording(rec, tmp_path / "a.imurec")
    with pytest.raises(DataError, match="label"):
        load_dataset(tmp_path)


def test_load_dataset_missing_directory(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope")


# ----------------------------------------------------------------- profile

def test_profile_reports_counts_and_median_time():
    data = toy_dataset(n_rec=3, frames_per=20)
    cfg = tiny_config(folds=3)
    p = profile(cfg, data, epochs=3)
    assert p["param_count"] == build_system(cfg, 0).param_count()
    assert len(p["epoch_times"]) == 3
    assert p["per_epoch_seconds"] == float(np.median(p["epoch_times"]))
    assert p["inference_seconds"] > 0 and math.isfinite(p["inference_seconds"])


def test_profile_needs_three_epochs():
    with pytest.raises(ValueError):
        profile(tiny_config(), toy_dataset(n_rec=3), epochs=2)
