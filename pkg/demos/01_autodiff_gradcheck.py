"""Build a tiny GRU classifier by hand and confirm its gradients numerically."""
import numpy as np

from imuhar.autodiff import Tensor, cross_entropy_loss, fully_connected, gru_sequence
from imuhar.autodiff.check import gradcheck

rng = np.random.default_rng(0)
T, F, H, C = 6, 4, 5, 3
x = Tensor(rng.standard_normal((1, T, F)))
W = Tensor(rng.standard_normal((F, 3 * H)) * 0.3)
U = Tensor(rng.standard_normal((H, 3 * H)) * 0.3)
b = Tensor(np.zeros(3 * H))
Wo = Tensor(rng.standard_normal((H, C)) * 0.3)
targets = rng.integers(0, C, size=T)


def loss(x, W, U, b, Wo):
    h = gru_sequence(x, W, U, b)  # (1, T, H)
    logits = fully_connected(h.reshape((T, H)), Wo)
    return cross_entropy_loss(logits, targets, C)


err = gradcheck(loss, [x, W, U, b, Wo])
print(f"worst relative gradient error: {err:.2e}")
assert err < 1e-5
