"""Movement classification from four body-worn IMUs with a small numpy autodiff engine.

Subpackages and modules:

* ``autodiff``    reverse-mode tensors, layers and Adam
* ``preprocess``  packets to bias-free, median-filtered 120-sample frames
* ``encoders``    frame to bottleneck feature encoders (Dense, Conv1D, Conv2D-I/IS/SI)
* ``timeseries``  per-frame classifiers over feature sequences (Dense, LSTM, GRU, BGRU, WaveNet)
* ``augment``     training-time dropout, rotation, time warp and sensor dropout
* ``harness``     cross-validated training, early stopping, reports
* ``robustness``  evaluation-time sensor drop and packet loss
* ``datagen``     synthetic labelled corpus generator
* ``cli``         the ``imuhar`` command
"""

__version__ = "0.1.0"
