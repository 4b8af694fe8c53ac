"""
Dropout against a plain network on a small noisy problem
========================================================

Two identical 40-100-100-3 ReLU nets are trained on 150 noisy cases. One uses
dropout (20% of inputs, 50% of hidden units) with a max-norm constraint on
incoming weights, the other plain momentum SGD. The plain net memorises the
training set; the dropout net generalises better.
"""
import numpy as np

from dropnet import LabeledDataset
from dropnet.config import load_config
from dropnet.trainer import train

gen = np.random.default_rng(0)
centers = gen.normal(size=(3, 40))


def sample(n):
    y = gen.integers(0, 3, size=n)
    return LabeledDataset(centers[y] * 0.6 + gen.normal(size=(n, 40)), y, 3)


train_ds, test_ds = sample(150), sample(3000)

common = {"network.input_shape": "40", "network.layers": "100 100 3", "network.init_sd": "0.1",
          "optimizer.eps0": "1.0", "optimizer.T": "50", "optimizer.batch_size": "10", "epochs": "60",
          "trainer.record_wallclock": "false", "seed": "1"}
runs = {
    "dropout + max-norm": {},
    "no dropout": {"dropout.input_retain": "1", "dropout.hidden_retain": "1", "optimizer.max_sq_norm": "none"},
}

# %%
for name, extra in runs.items():
    cfg = load_config(None, {**common, **extra})
    _, rows = train(cfg, train_ds, test_ds)
    last = rows[-1]
    print(f"{name:>18}: train error {100 * last.train_err:5.1f}%  test error {100 * last.test_err:5.1f}%")
