import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dropnet.config import load_config  # noqa: E402
from dropnet.data import LabeledDataset  # noqa: E402


def blobs(n=60, dim=8, classes=3, seed=0):
    centers = np.random.default_rng(1000 + classes).normal(size=(classes, dim)) * 2
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    X = centers[y] + rng.normal(size=(n, dim))
    return LabeledDataset(X, y, classes)


@pytest.fixture
def toy():
    return blobs(), blobs(30, seed=1)


@pytest.fixture
def small_config():
    def make(**overrides):
        values = {
            "network.input_shape": "8", "network.layers": "12 12 3", "network.init_sd": "0.3",
            "optimizer.eps0": "0.5", "optimizer.batch_size": "10", "optimizer.T": "5",
            "dropout.input_retain": "0.8", "dropout.hidden_retain": "0.5",
            "epochs": "4", "seed": "3", "trainer.record_wallclock": "false",
        }
        values.update({k.replace("__", "."): str(v) for k, v in overrides.items()})
        return load_config(None, values)
    return make


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
