"""
A short MNIST run and its first-layer features
==============================================

Trains a 784-800-800-10 ReLU net with dropout on 5000 digits for a few
epochs, reports mean-network test error, and writes 100 first-layer weight
vectors as a 28x28 tile grid in PGM format. Set DROPNET_MNIST_DIR to a
folder holding the four MNIST IDX files.
"""
import os
from pathlib import Path

from dropnet import RandomSource, export_features, load_mnist, train
from dropnet.config import load_config

mnist = Path(os.environ.get("DROPNET_MNIST_DIR", "/root/data/mnist"))
train_ds = load_mnist(mnist, "train").take(range(5000))
test_ds = load_mnist(mnist, "test")

cfg = load_config(None, {"epochs": "5", "optimizer.eps0": "1.0", "trainer.record_wallclock": "false"})
net, rows = train(cfg, train_ds, test_ds)
for r in rows:
    print(f"epoch {r.epoch}: train xent {r.train_xent:.3f}  test error {100 * r.test_err:.2f}%")

# %%
out = Path("features.pgm")
img = export_features(net, 0, (28, 28), out, 100, RandomSource(0))
print(f"wrote {out} ({img.shape[1]}x{img.shape[0]})")
