import json

import numpy as np
import pytest

from imuhar.encoders import EncoderSpec
from imuhar.model import CheckpointError, System, load_checkpoint, save_checkpoint
from imuhar.timeseries import TimeSeriesSpec

ENC = EncoderSpec(kind="conv2d-si", bottleneck_size=8, si_channels=(2, 3, 3), fc_hidden=6)
TS = TimeSeriesSpec(kind="gru", hidden_size=5)


def frames(n, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 24, 120))


def test_logits_shape_and_predict():
    s = System(ENC, TS, seed=1)
    assert s.logits(frames(6).reshape(2, 3, 24, 120)).shape == (2, 3, 7)
    pred = s.predict(frames(7), seq_len=3)
    assert pred.shape == (7,) and pred.min() >= 0 and pred.max() < 7


def test_predict_chunks_into_sequences():
    s = System(ENC, TS, seed=1)
    x = frames(7)
    whole = s.predict_logits(x, seq_len=3)
    np.testing.assert_allclose(whole[:3], s.logits(x[None, :3]).data[0], atol=1e-12)
    np.testing.assert_allclose(whole[6:], s.logits(x[None, 6:]).data[0], atol=1e-12)


def test_input_scale_is_per_modality_rms():
    s = System(ENC, TS)
    x = frames(4)
    x[:, [0, 1, 2, 6, 7, 8, 12, 13, 14, 18, 19, 20]] *= 0.1
    scale = s.fit_input_scale(x)
    assert len(set(np.round(scale, 12))) == 2
    assert scale[0] == pytest.approx(np.sqrt(np.mean(x[:, [0, 1, 2, 6, 7, 8, 12, 13, 14, 18, 19, 20]] ** 2)))


def test_checkpoint_round_trip(tmp_path):
    s = System(ENC, TS, seed=3)
    s.fit_input_scale(frames(3) * 4)
    path = tmp_path / "m.npz"
    save_checkpoint(path, s, extra={"fold": 2})
    (back,), extra = load_checkpoint(path)
    assert extra == {"fold": 2}
    assert back.encoder_spec == ENC and back.ts_spec == TS
    np.testing.assert_array_equal(back.input_scale, s.input_scale)
    for k, v in s.state().items():
        np.testing.assert_array_equal(back.state()[k], v)
    x = frames(5, seed=9)
    np.testing.assert_array_equal(back.predict_logits(x), s.predict_logits(x))


def test_checkpoint_holds_several_systems(tmp_path):
    a = System(ENC, TS, seed=1)
    b = System(ENC, TimeSeriesSpec(kind="wavenet", residual_channels=3, skip_channels=3), seed=2)
    save_checkpoint(tmp_path / "two.npz", [a, b])
    systems, _ = load_checkpoint(tmp_path / "two.npz")
    assert [s.name for s in systems] == ["conv2d-si+gru", "conv2d-si+wavenet"]


def test_float32_checkpoint_keeps_dtype(tmp_path):
    s = System(ENC, TS, seed=3, dtype=np.float32)
    save_checkpoint(tmp_path / "f.npz", s)
    (back,), _ = load_checkpoint(tmp_path / "f.npz")
    assert back.dtype == np.float32


def test_spec_mismatch_rejected(tmp_path):
    path = tmp_path / "m.npz"
    save_checkpoint(path, System(ENC, TS, seed=3))
    z = dict(np.load(path))
    meta = json.loads(bytes(z["meta"]).decode())
    meta["models"][0]["timeseries"]["hidden_size"] = 6
    z["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **z)
    with pytest.raises(CheckpointError, match="mismatch"):
        load_checkpoint(path)


def test_unreadable_checkpoint(tmp_path):
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.npz")
