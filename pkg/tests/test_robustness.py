import numpy as np
import pytest

from imuhar.encoders import EncoderSpec
from imuhar.harness import Dataset, evaluate
from imuhar.metrics import uwaf
from imuhar.model import System
from imuhar.preprocess import FrameTensor, window_frames
from imuhar.robustness import (
    DEFAULT_CONDITIONS,
    Evaluated,
    NoiseCondition,
    apply_packet_loss,
    apply_sensor_drop,
    condition_variants,
    parse_noise,
    robustness_suite,
    summary,
)
from imuhar.timeseries import TimeSeriesSpec


def frames(n, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 24, 120)) + 5.0


def signal(n, seed=0):
    return np.random.default_rng(seed).standard_normal((24, n)) + 5.0


# ---------------------------------------------------------------- condition

def test_parse_noise():
    assert parse_noise("sensor_drop:1") == NoiseCondition("sensor_drop", sensors_dropped=1)
    assert parse_noise("packet_loss:0.5").loss_rate == 0.5
    assert parse_noise("clean").kind == "clean"
    with pytest.raises(ValueError):
        parse_noise("jitter:3")
    with pytest.raises(ValueError):
        parse_noise("packet_loss:2")


def test_severity_labels():
    sev = {c.label: c.severity for c in DEFAULT_CONDITIONS}
    assert sev == {"sensor_drop:1": "moderate", "sensor_drop:2": "severe",
                   "packet_loss:0.25": "moderate", "packet_loss:0.5": "severe"}


def test_condition_invariants():
    with pytest.raises(ValueError):
        NoiseCondition("packet_loss", loss_rate=-0.1)
    with pytest.raises(ValueError):
        NoiseCondition("packet_loss", loss_rate=0.2, burst_len=0)


def test_drop_combination_counts():
    assert len(condition_variants(parse_noise("sensor_drop:1"), 5)) == 4
    assert len(condition_variants(parse_noise("sensor_drop:2"), 5)) == 6
    assert len(condition_variants(parse_noise("packet_loss:0.5"), 5)) == 5


# ------------------------------------------------------------- sensor drop

def test_sensor_drop_empty_set_identity():
    x = frames(3)
    np.testing.assert_array_equal(apply_sensor_drop(x, set()), x)


def test_sensor_drop_zeroes_all_six_channels():
    x = frames(3)
    out = apply_sensor_drop(x, {1, 3})
    for s in range(4):
        block = out[:, 6 * s : 6 * s + 6]
        if s in (1, 3):
            assert not np.any(block)
        else:
            np.testing.assert_array_equal(block, x[:, 6 * s : 6 * s + 6])


def test_sensor_drop_idempotent_and_commutative():
    x = frames(2)
    once = apply_sensor_drop(x, {2})
    np.testing.assert_array_equal(apply_sensor_drop(once, {2}), once)
    ab = apply_sensor_drop(apply_sensor_drop(x, {0}), {3})
    ba = apply_sensor_drop(apply_sensor_drop(x, {3}), {0})
    np.testing.assert_array_equal(ab, ba)
    np.testing.assert_array_equal(ab, apply_sensor_drop(x, {0, 3}))


def test_sensor_drop_does_not_modify_input():
    x = frames(2)
    keep = x.copy()
    apply_sensor_drop(x, {0})
    np.testing.assert_array_equal(x, keep)


def test_sensor_drop_on_signal_and_frame_tensor():
    s = signal(300)
    out = apply_sensor_drop(s, {0})
    assert not np.any(out[:6]) and np.array_equal(out[6:], s[6:])
    ft = FrameTensor(frames(2))
    assert isinstance(apply_sensor_drop(ft, {1}), FrameTensor)


def test_sensor_drop_rejects_bad_index():
    with pytest.raises(ValueError):
        apply_sensor_drop(frames(1), {4})


# ------------------------------------------------------------- packet loss

def test_packet_loss_rate_zero_identity():
    x = frames(4)
    np.testing.assert_array_equal(apply_packet_loss(x, 0.0, seed=1), x)


def test_packet_loss_rate_one_zeroes_everything():
    assert not np.any(apply_packet_loss(frames(4), 1.0, seed=1))
    assert not np.any(apply_packet_loss(signal(100), 1.0, seed=1))


def test_packet_loss_fraction_on_long_signal():
    s = signal(200_000)
    out = apply_packet_loss(s, 0.25, seed=3)
    frac = np.mean(out == 0)
    assert abs(frac - 0.25) <= 0.01


def test_packet_loss_bursts_aligned_and_whole():
    s = signal(4000)
    out = apply_packet_loss(s, 0.4, seed=5)
    for sensor in range(4):
        lost = np.all(out[6 * sensor : 6 * sensor + 6] == 0, axis=0)
        # every sample of a sensor is lost together across its 6 channels
        assert np.array_equal(lost, np.any(out[6 * sensor : 6 * sensor + 6] == 0, axis=0))
        bursts = lost.reshape(-1, 4)
        assert np.all(bursts.all(1) | ~bursts.any(1))


def test_packet_loss_independent_per_sensor():
    out = apply_packet_loss(signal(4000), 0.5, seed=2)
    masks = [np.all(out[6 * s : 6 * s + 6] == 0, axis=0) for s in range(4)]
    assert not all(np.array_equal(masks[0], m) for m in masks[1:])


def test_packet_loss_deterministic_per_seed():
    x = frames(5)
    np.testing.assert_array_equal(apply_packet_loss(x, 0.3, seed=9), apply_packet_loss(x, 0.3, seed=9))
    assert not np.array_equal(apply_packet_loss(x, 0.3, seed=9), apply_packet_loss(x, 0.3, seed=10))


def test_packet_loss_on_frames_matches_loss_on_signal():
    """Overlapping frames lose the same recording samples as the underlying signal."""
    s = signal(600)
    ft = window_frames(s)
    lost_sig = apply_packet_loss(s, 0.3, seed=4)
    lost_frames = apply_packet_loss(ft.values, 0.3, seed=4)
    np.testing.assert_array_equal(lost_frames, window_frames(lost_sig).values)


def test_packet_loss_frame_tensor_type_preserved():
    assert isinstance(apply_packet_loss(FrameTensor(frames(2)), 0.2, seed=0), FrameTensor)


def test_packet_loss_rejects_bad_rate():
    with pytest.raises(ValueError):
        apply_packet_loss(frames(1), 1.2)


# ------------------------------------------------------------------- suite

@pytest.fixture(scope="module")
def suite_setup():
    rng = np.random.default_rng(0)
    ids, fr, lab = [], [], []
    for r in range(3):
        y = rng.integers(0, 3, 40)
        x = 0.2 * rng.standard_normal((40, 24, 120))
        for s in range(4):
            x[:, 6 * s] += y[:, None]
        ids.append(f"r{r}")
        fr.append(x)
        lab.append(y)
    data = Dataset(ids, fr, lab)
    enc = EncoderSpec(kind="conv1d", bottleneck_size=8, conv1d_channels=(3, 3, 3, 3))
    ts = TimeSeriesSpec(kind="wavenet", residual_channels=3, skip_channels=3, dense_hidden=4)
    models = [Evaluated("m", k, System(enc, ts, seed=k), [ids[k]]) for k in range(3)]
    return data, models


def test_clean_reproduces_harness_uwaf(suite_setup):
    data, models = suite_setup
    rows = robustness_suite(models, data, conditions=())
    expect = np.mean([uwaf(evaluate(m.system, data, m.test_ids, 100))[0] for m in models])
    assert rows[0]["condition"] == "clean"
    assert rows[0]["uwaf"] == expect


def test_suite_rows_and_means(suite_setup):
    data, models = suite_setup
    rows = robustness_suite(models, data, DEFAULT_CONDITIONS, repeats=2)
    s = summary(rows)
    assert set(s) == {("m", "clean")} | {("m", c.label) for c in DEFAULT_CONDITIONS}
    drop1 = [r for r in rows if r["condition"] == "sensor_drop:1" and r["combination"] != "mean"]
    assert len(drop1) == 4
    assert s[("m", "sensor_drop:1")] == pytest.approx(np.mean([r["uwaf"] for r in drop1]))
    for r in rows:
        assert r["delta_vs_clean"] == pytest.approx(r["uwaf"] - s[("m", "clean")])


def test_suite_reproducible_and_parameters_untouched(suite_setup):
    data, models = suite_setup
    before = [m.system.state() for m in models]
    a = robustness_suite(models, data, DEFAULT_CONDITIONS, repeats=2)
    b = robustness_suite(models, data, DEFAULT_CONDITIONS, repeats=2)
    assert a == b
    for m, st in zip(models, before):
        for k, v in m.system.state().items():
            np.testing.assert_array_equal(v, st[k])


def test_full_drop_equals_all_zero_input(suite_setup):
    data, models = suite_setup
    m = models[0]
    x = data.frames[data.index(m.test_ids[0])]
    np.testing.assert_array_equal(m.system.predict(apply_sensor_drop(x, {0, 1, 2, 3})), m.system.predict(np.zeros_like(x)))
