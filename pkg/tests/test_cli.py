import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from imuhar.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_DIVERGED,
    EXIT_OK,
    EXIT_REFUSED,
    MANIFEST_NAME,
    PROFILE_HEADER,
    SWEEP_HEADER,
    compression,
    main,
)
from imuhar.harness import ExperimentConfig
from imuhar.model import load_checkpoint

GEN_INI = """[generator]
n_recordings = 4
duration_min = 1.5, 2.0
min_recordings_per_class = 0
"""

EXP_INI = """[experiment]
max_epochs = 2
patience = 2
folds = 2
repeats = 1
lr = 0.001
minibatch_len = 20

[encoder]
kind = conv1d
conv1d_channels = 3, 3, 3, 3
dense_hidden = 8
conv2d_channels = 2, 2, 2, 2
si_channels = 2, 2, 2
fc_hidden = 8
bottleneck_size = 8

[timeseries]
kind = wavenet
hidden_size = 4
dense_hidden = 4
residual_channels = 3
skip_channels = 3
"""


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "gen.ini").write_text(GEN_INI)
    (root / "exp.ini").write_text(EXP_INI)
    assert main(["datagen", "--config", str(root / "gen.ini"), "--out", str(root / "data")]) == EXIT_OK
    assert main(["train", "--config", str(root / "exp.ini"), "--data", str(root / "data"), "--out", str(root / "train"), "--jobs", "1"]) == EXIT_OK
    return root


# ----------------------------------------------------------------- datagen

def test_datagen_writes_recordings_labels_manifest(work):
    files = sorted(p.name for p in (work / "data").iterdir())
    assert sum(f.endswith(".imurec") for f in files) == 4
    assert sum(f.endswith(".labels") for f in files) == 4
    assert "manifest.txt" in files and MANIFEST_NAME in files


def test_datagen_refuses_existing_dir(work):
    assert main(["datagen", "--config", str(work / "gen.ini"), "--out", str(work / "data")]) == EXIT_REFUSED


def test_datagen_seed_changes_hash(work, tmp_path):
    assert main(["datagen", "--config", str(work / "gen.ini"), "--out", str(tmp_path / "s7"), "--seed", "7"]) == EXIT_OK
    a = json.loads((work / "data" / MANIFEST_NAME).read_text())
    b = json.loads((tmp_path / "s7" / MANIFEST_NAME).read_text())
    assert a["config_hash"] != b["config_hash"]


def test_datagen_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[generator]\nn_recordings = 0\n")
    assert main(["datagen", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    bad.write_text("[generator]\nwibble = 3\n")
    assert main(["datagen", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_default_output_root_from_environment(work, tmp_path, monkeypatch):
    monkeypatch.setenv("IMUHAR_OUT", str(tmp_path / "root"))
    assert main(["datagen", "--config", str(work / "gen.ini")]) == EXIT_OK
    (made,) = list((tmp_path / "root").iterdir())
    assert made.name.startswith("datagen-") and (made / MANIFEST_NAME).exists()


# ------------------------------------------------------------------- train

def test_train_outputs(work):
    out = work / "train"
    rep = json.loads((out / "report.json").read_text())
    assert rep["system"] == "conv1d+wavenet"
    assert len(rep["rows"]) == 2
    rows = read_csv(out / "report.csv")
    assert rows[0][:4] == ["system", "fold", "repeat", "uwaf"] and len(rows) == 3
    ckpts = sorted((out / "checkpoints").iterdir())
    assert [p.name for p in ckpts] == ["fold0_rep0.npz", "fold1_rep0.npz"]
    systems, extra = load_checkpoint(ckpts[0])
    assert extra["fold"] == 0 and extra["test_ids"] == rep["rows"][0]["test_ids"]
    assert systems[0].name == "conv1d+wavenet"


def test_train_missing_labels_exit_code(work, tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    src = next((work / "data").glob("*.imurec"))
    (d / src.name).write_bytes(src.read_bytes())
    code = main(["train", "--config", str(work / "exp.ini"), "--data", str(d), "--out", str(tmp_path / "o")])
    assert code == EXIT_DATA


def test_train_bad_encoder_exit_code(work, tmp_path):
    code = main(["train", "--config", str(work / "exp.ini"), "--data", str(work / "data"), "--out", str(tmp_path / "o"),
                 "--encoder", "transformer"])
    assert code == EXIT_CONFIG


def test_train_bad_augment_exit_code(work, tmp_path):
    code = main(["train", "--config", str(work / "exp.ini"), "--data", str(work / "data"), "--out", str(tmp_path / "o"),
                 "--augment", "dr1,blur"])
    assert code == EXIT_CONFIG


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(work, tmp_path):
    cfg = ExperimentConfig.from_ini(EXP_INI).with_(lr=1e30)
    (tmp_path / "hot.ini").write_text(cfg.to_ini())
    code = main(["train", "--config", str(tmp_path / "hot.ini"), "--data", str(work / "data"), "--out", str(tmp_path / "o"),
                 "--jobs", "1"])
    assert code == EXIT_DIVERGED
    assert (tmp_path / "o" / "report.json").exists()


def test_train_grid_subset_and_augment_flag(work, tmp_path):
    out = tmp_path / "grid"
    code = main(["train", "--config", str(work / "exp.ini"), "--data", str(work / "data"), "--out", str(out),
                 "--encoder", "all", "--timeseries", "dense", "--only-folds", "0", "--augment", "ds", "--jobs", "1"])
    assert code == EXIT_OK
    dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert dirs == ["conv1d_dense", "conv2d-i_dense", "conv2d-is_dense", "conv2d-si_dense", "dense_dense"]
    rep = json.loads((out / "conv2d-si_dense" / "report.json").read_text())
    assert rep["config"]["augment"]["enabled"] == "ds"
    assert len(rep["rows"]) == 1


# -------------------------------------------------------------------- eval

def test_eval_clean_matches_training_report(work, tmp_path):
    ck = work / "train" / "checkpoints" / "fold1_rep0.npz"
    assert main(["eval", "--checkpoint", str(ck), "--data", str(work / "data"), "--out", str(tmp_path / "e")]) == EXIT_OK
    rows = read_csv(tmp_path / "e" / "robustness.csv")
    assert rows[0] == ["model", "condition", "severity", "combination", "uwaf", "delta_vs_clean"]
    rep = json.loads((work / "train" / "report.json").read_text())
    assert float(rows[1][4]) == rep["rows"][1]["uwaf"]


def test_eval_noise_combinations(work, tmp_path):
    code = main(["eval", "--checkpoint", str(work / "train"), "--data", str(work / "data"), "--out", str(tmp_path / "e"),
                 "--noise", "sensor_drop:1", "--noise", "packet_loss:0.5"])
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "e" / "robustness.csv")[1:]
    drops = [r for r in rows if r[1] == "sensor_drop:1" and r[3] != "mean"]
    loss = [r for r in rows if r[1] == "packet_loss:0.5" and r[3] != "mean"]
    assert len(drops) == 4 and len(loss) == 5
    plot = read_csv(tmp_path / "e" / "plot_data.csv")
    assert plot[0] == ["series", "x", "y"] and len(plot) == 4


def test_eval_spec_mismatch_exit_code(work, tmp_path):
    ck = tmp_path / "bad.npz"
    z = dict(np.load(work / "train" / "checkpoints" / "fold0_rep0.npz"))
    meta = json.loads(bytes(z["meta"]).decode())
    meta["models"][0]["encoder"]["bottleneck_size"] = 16
    z["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(ck, **z)
    assert main(["eval", "--checkpoint", str(ck), "--data", str(work / "data"), "--out", str(tmp_path / "e")]) == EXIT_CONFIG


def test_eval_bad_noise_exit_code(work, tmp_path):
    code = main(["eval", "--checkpoint", str(work / "train"), "--data", str(work / "data"), "--out", str(tmp_path / "e"),
                 "--noise", "sensor_drop:x"])
    assert code == EXIT_CONFIG


# ----------------------------------------------------------------- profile

def test_compression_column():
    assert compression(20) == "36:1"
    assert compression(40) == "18:1"
    assert compression(10) == "72:1"


def test_profile_tables(work, tmp_path):
    out = tmp_path / "p"
    code = main(["profile", "--config", str(work / "exp.ini"), "--data", str(work / "data"), "--out", str(out),
                 "--max-batches", "2"])
    assert code == EXIT_OK
    prof = read_csv(out / "profile.csv")
    assert tuple(prof[0]) == PROFILE_HEADER and len(prof) == 2
    sweep = read_csv(out / "bottleneck.csv")
    assert tuple(sweep[0]) == SWEEP_HEADER
    assert [int(r[1]) for r in sweep[1:]] == [160, 80, 40]
    assert [r[3] for r in sweep[1:]] == ["18:1", "36:1", "72:1"]
    params = [int(r[4]) for r in sweep[1:]]
    assert params[0] > params[1] > params[2]


def test_profile_epochs_below_three_rejected(work, tmp_path):
    code = main(["profile", "--config", str(work / "exp.ini"), "--data", str(work / "data"), "--out", str(tmp_path / "p"),
                 "--epochs", "2"])
    assert code == EXIT_CONFIG


# ------------------------------------------------------------------- rerun

@pytest.mark.parametrize("run", ["data", "train"])
def test_rerun_reproduces_outputs(work, run, capsys):
    assert main(["rerun", str(work / run), "--out", str(work / f"{run}-again"), "--force"]) == EXIT_OK
    assert "all identical" in capsys.readouterr().out


def test_rerun_eval_reproduces(work, tmp_path, capsys):
    e = tmp_path / "e"
    assert main(["eval", "--checkpoint", str(work / "train"), "--data", str(work / "data"), "--out", str(e), "--noise", "packet_loss:0.25"]) == 0
    assert main(["rerun", str(e / MANIFEST_NAME), "--out", str(tmp_path / "e2")]) == EXIT_OK
    assert "all identical" in capsys.readouterr().out


def test_rerun_detects_changed_data(work, tmp_path):
    import shutil
    d = tmp_path / "data"
    shutil.copytree(work / "data", d)
    t = tmp_path / "t"
    assert main(["train", "--config", str(work / "exp.ini"), "--data", str(d), "--out", str(t), "--jobs", "1"]) == EXIT_OK
    lab = next(d.glob("*.labels"))
    lab.write_text(lab.read_text().replace("0", "1", 1))
    assert main(["rerun", str(t), "--out", str(tmp_path / "t2")]) == EXIT_DATA


def test_manifest_contents(work):
    man = json.loads((work / "train" / MANIFEST_NAME).read_text())
    assert man["command"] == "train"
    assert set(man) >= {"config", "config_hash", "seeds", "versions", "outputs", "timing"}
    assert man["config_hash"] == ExperimentConfig.from_dict(man["config"]).hash()
    assert "report.json" in man["outputs"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "imuhar", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("datagen", "train", "eval", "profile", "rerun"):
        assert cmd in res.stdout
