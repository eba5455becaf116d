import itertools

import numpy as np
import pytest

from imuhar import autodiff as ad
from imuhar.autodiff.check import gradcheck
from imuhar.encoders import (
    ENCODER_KINDS,
    EncoderSpec,
    build_encoder,
    merge_modalities,
    split_modalities,
)
from imuhar.preprocess import GYRO_ROWS

SMALL = dict(
    bottleneck_size=16,
    dense_hidden=(8,),
    conv1d_channels=(4, 4, 4, 4),
    conv2d_channels=(3, 4, 4, 4),
    si_channels=(3, 4, 4),
    fc_hidden=8,
)


def frames(n, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 24, 120))


def sensor_perm(x, perm):
    """Sensor slot s of the result holds sensor perm[s] of x."""
    b = x.reshape(x.shape[0], 4, 6, -1)
    return b[:, list(perm)].reshape(x.shape)


# ------------------------------------------------------------------- shapes

@pytest.mark.parametrize("kind", ENCODER_KINDS)
@pytest.mark.parametrize("n", [0, 1, 3])
def test_output_shape(kind, n):
    enc = build_encoder(EncoderSpec(kind=kind, **SMALL), seed=1)
    assert enc(frames(n)).shape == (n, 16)


@pytest.mark.parametrize("kind", ENCODER_KINDS)
def test_wrong_frame_shape_rejected(kind):
    enc = build_encoder(EncoderSpec(kind=kind, **SMALL))
    with pytest.raises(ValueError, match="24, 120"):
        enc(np.zeros((2, 24, 100)))


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="unknown encoder"):
        EncoderSpec(kind="lstm")


def test_si_bottleneck_must_split_over_sensors():
    with pytest.raises(ValueError, match="divisible"):
        EncoderSpec(kind="conv2d-si", bottleneck_size=18)
    EncoderSpec(kind="conv1d", bottleneck_size=18)


def test_kind_aliases_normalised():
    assert EncoderSpec(kind="Conv2D_SI").kind == "conv2d-si"


def test_spec_dict_round_trip():
    spec = EncoderSpec(kind="conv2d-is", **SMALL)
    assert EncoderSpec.from_dict(spec.to_dict()) == spec


# ----------------------------------------------------------------- modality

def test_split_merge_identity():
    f = frames(1)[0]
    acc, gyro = split_modalities(f)
    assert acc.shape == gyro.shape == (4, 3, 120)
    np.testing.assert_array_equal(merge_modalities(acc, gyro), f)


def test_split_channel_mapping():
    f = np.arange(24)[:, None] * np.ones((1, 120))
    acc, gyro = split_modalities(f)
    for s in range(4):
        for a in range(3):
            assert acc[s, a, 0] == 6 * s + a
            assert gyro[s, a, 0] == 6 * s + 3 + a


# ------------------------------------------------------------- param counts

def dense_count(widths):
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def test_param_count_dense_closed_form():
    spec = EncoderSpec(kind="dense")
    assert build_encoder(spec).param_count() == dense_count([2880, 256, 256, 256, 160])


def test_param_count_conv1d_closed_form():
    spec = EncoderSpec(kind="conv1d")
    chans = [24, 32, 32, 48, 48]
    conv = sum(a * b * 5 + b for a, b in zip(chans[:-1], chans[1:]))
    # 120 -> 60 -> 30 -> 15 -> 8 after four stride-2 "same" convs
    assert build_encoder(spec).param_count() == conv + 48 * 8 * 160 + 160


def test_param_count_conv2d_i_closed_form():
    c1, c2, c3, c4 = 16, 32, 48, 48
    path = (1 * c1 * 15 + c1) + (c1 * c2 * 20 + c2) + (c2 * c3 * 5 + c3) + (c3 * c4 * 5 + c4)
    fc = dense_count([2 * c4 * 15, 256, 160])
    assert build_encoder(EncoderSpec(kind="conv2d-i")).param_count() == 2 * path + fc
    fc_is = dense_count([3 * c4 * 15, 256, 160])
    assert build_encoder(EncoderSpec(kind="conv2d-is")).param_count() == 3 * path + fc_is


def test_param_count_conv2d_si_closed_form():
    c1, c2, c3 = 16, 32, 48
    path = (c1 * 15 + c1) + (c1 * c2 * 5 + c2) + (c2 * c3 * 5 + c3)
    fc = dense_count([3 * c3 * 15, 256, 40])
    assert build_encoder(EncoderSpec(kind="conv2d-si")).param_count() == 3 * path + fc


def test_dense_encoder_at_least_five_times_conv1d():
    dense = build_encoder(EncoderSpec(kind="dense")).param_count()
    conv = build_encoder(EncoderSpec(kind="conv1d")).param_count()
    assert dense >= 5 * conv


def test_smaller_bottleneck_fewer_si_params():
    counts = [build_encoder(EncoderSpec(kind="conv2d-si", bottleneck_size=b)).param_count() for b in (160, 80, 40)]
    assert counts[0] > counts[1] > counts[2]


# ------------------------------------------------------------- equivariance

def test_si_sensor_permutation_equivariance_exact():
    enc = build_encoder(EncoderSpec(kind="conv2d-si", **SMALL), seed=3)
    x = frames(3, seed=5)
    base = enc(x).data.reshape(3, 4, -1)
    for perm in itertools.permutations(range(4)):
        out = enc(sensor_perm(x, perm)).data.reshape(3, 4, -1)
        np.testing.assert_array_equal(out, base[:, list(perm)])


def test_si_no_inter_sensor_mixing():
    enc = build_encoder(EncoderSpec(kind="conv2d-si", **SMALL), seed=3)
    x = frames(2, seed=6)
    y = x.copy()
    y[:, 6:12] += 1.0  # sensor 1 only
    a = enc(x).data.reshape(2, 4, -1)
    b = enc(y).data.reshape(2, 4, -1)
    np.testing.assert_array_equal(a[:, [0, 2, 3]], b[:, [0, 2, 3]])
    assert not np.array_equal(a[:, 1], b[:, 1])


def test_conv1d_mixes_sensors():
    enc = build_encoder(EncoderSpec(kind="conv1d", **SMALL), seed=3)
    x = frames(1, seed=6)
    y = x.copy()
    y[:, 6:12] += 1.0
    assert not np.allclose(enc(x).data, enc(y).data)


# ------------------------------------------------------------- I versus IS

def test_is_equals_i_when_shared_path_is_silenced():
    spec_i = EncoderSpec(kind="conv2d-i", **SMALL)
    spec_is = EncoderSpec(kind="conv2d-is", **SMALL)
    e_i = build_encoder(spec_i, seed=4)
    e_is = build_encoder(spec_is, seed=4)
    for name in e_i.store:
        if name.startswith("enc.acc") or name.startswith("enc.gyro"):
            np.testing.assert_array_equal(e_i.store[name].data, e_is.store[name].data)
    w_i = e_i.store["enc.fc1.W"].data
    w_is = e_is.store["enc.fc1.W"].data
    w_is[: w_i.shape[0]] = w_i
    w_is[w_i.shape[0] :] = 0.0
    e_is.store["enc.fc2.W"].data[...] = e_i.store["enc.fc2.W"].data
    x = frames(2, seed=7)
    np.testing.assert_allclose(e_is(x).data, e_i(x).data, rtol=0, atol=1e-12)


def test_is_shared_path_changes_output():
    e_i = build_encoder(EncoderSpec(kind="conv2d-i", **SMALL), seed=4)
    e_is = build_encoder(EncoderSpec(kind="conv2d-is", **SMALL), seed=4)
    assert e_is.param_count() > e_i.param_count()
    assert any(n.startswith("enc.shared") for n in e_is.store)
    assert not any(n.startswith("enc.shared") for n in e_i.store)


# ----------------------------------------------------------------- gradients

@pytest.mark.parametrize("kind", ENCODER_KINDS)
def test_every_parameter_receives_gradient(kind):
    enc = build_encoder(EncoderSpec(kind=kind, **SMALL), seed=2)
    # random biases so no unit sits in the flat part of tanh/lrelu for all inputs
    rng = np.random.default_rng(0)
    for name, p in enc.store.items():
        if name.endswith(".b"):
            p.data[...] = rng.uniform(0.05, 0.2, p.shape)
    enc(frames(4)).sum().backward()
    for name, p in enc.store.items():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_zero_gyro_input_leaves_gyro_first_layer_silent():
    enc = build_encoder(EncoderSpec(kind="conv2d-i", **SMALL), seed=2)
    x = frames(3)
    x[:, GYRO_ROWS] = 0.0
    enc(x).sum().backward()
    assert np.all(enc.store["enc.gyro.xyz.W"].grad == 0)
    assert np.any(enc.store["enc.acc.xyz.W"].grad != 0)


@pytest.mark.parametrize("kind", ENCODER_KINDS)
def test_encoder_gradcheck(kind):
    enc = build_encoder(EncoderSpec(kind=kind, **SMALL), seed=9)
    x = ad.Tensor(frames(2, seed=1))
    params = [p for _, p in enc.store.items()]
    err = gradcheck(lambda x_, *ps: enc(x_), [x, *params], seed=3, max_entries=12)
    assert err < 1e-5


# --------------------------------------------------------------- determinism

@pytest.mark.parametrize("kind", ENCODER_KINDS)
def test_same_seed_same_parameters(kind):
    a = build_encoder(EncoderSpec(kind=kind, **SMALL), seed=11)
    b = build_encoder(EncoderSpec(kind=kind, **SMALL), seed=11)
    c = build_encoder(EncoderSpec(kind=kind, **SMALL), seed=12)
    for name, p in a.store.items():
        np.testing.assert_array_equal(p.data, b.store[name].data)
    assert any(not np.array_equal(p.data, c.store[name].data) for name, p in a.store.items() if name.endswith(".W"))
