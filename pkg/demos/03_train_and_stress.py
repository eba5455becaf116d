"""Train a small Conv2D-SI + WaveNet system on one fold and probe it with sensor loss.

Takes a few minutes on one core.
"""
from imuhar.datagen import GeneratorConfig, corpus
from imuhar.encoders import EncoderSpec
from imuhar.harness import Dataset, ExperimentConfig, run_experiment
from imuhar.robustness import Evaluated, parse_noise, robustness_suite
from imuhar.timeseries import TimeSeriesSpec

data = Dataset.from_corpus(corpus(GeneratorConfig(n_recordings=10, duration_min=(10.0, 15.0))))
cfg = ExperimentConfig(
    encoder=EncoderSpec(kind="conv2d-si", si_channels=(4, 8, 8), fc_hidden=128),
    timeseries=TimeSeriesSpec(kind="wavenet", hidden_size=32, dense_hidden=32, residual_channels=24, skip_channels=24),
    lr=1e-3, max_epochs=20, patience=5, folds=5, repeats=1, seqs_per_step=4,
)
res = run_experiment(cfg, data, folds=[0])
print("fold 0 clean UWAF:", round(res.report.rows[0]["uwaf"], 3))

models = [Evaluated(cfg.system_name, fr.fold, s, fr.test_ids) for fr, s in res.systems()]
for row in robustness_suite(models, data, [parse_noise("sensor_drop:1"), parse_noise("packet_loss:0.3")], repeats=2):
    if row["combination"] == "mean":
        print(f'{row["condition"]:>16s}  UWAF {row["uwaf"]:.3f}  change {row["delta_vs_clean"]:+.3f}')
