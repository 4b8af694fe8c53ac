"""Training loop, mean-network evaluation, metrics logging and checkpoints."""
from __future__ import annotations

import csv
import io
import json
import logging
import struct
import time
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig, build_network, skeleton_network
from .data import DataError, LabeledDataset, batch_indices, load_feature_idx, load_mnist, standardize
from .dropout import DropoutSpec, sample_case_masks, to_mean_network
from .layers import Network, network_backward, network_forward, softmax_xent
from .numeric import RandomSource, row_sq_norms
from .optim import OptimizerState, lr_at, momentum_at, sgd_update

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "lr", "momentum", "train_xent", "train_err", "test_err", "wallclock_s"]
CHECKPOINT_MAGIC = b"DROPNET-CKPT"
CHECKPOINT_VERSION = 1


class TrainingDiverged(ArithmeticError):
    """The training loss became NaN or infinite; ``snapshot`` describes where."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


class CheckpointError(ValueError):
    pass


@dataclass
class MetricsRow:
    epoch: int
    lr: float
    momentum: float
    train_xent: float
    train_err: float
    test_err: float | None
    wallclock_s: float

    def as_csv(self) -> list[str]:
        fmt = lambda v: "" if v is None else f"{v:.17g}"  # noqa: E731
        return [str(self.epoch), fmt(self.lr), fmt(self.momentum), fmt(self.train_xent),
                fmt(self.train_err), fmt(self.test_err), fmt(self.wallclock_s)]


def append_metrics(path, row: MetricsRow) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(METRICS_HEADER)
        w.writerow(row.as_csv())


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@dataclass
class TrainState:
    """Everything needed to continue training bit-for-bit."""

    net: Network
    optimizer: OptimizerState
    rng: RandomSource

    @property
    def epoch(self) -> int:
        return self.optimizer.t


def init_state(config: TrainConfig) -> TrainState:
    rng = RandomSource(config.seed)
    net = build_network(config.network, rng)
    return TrainState(net, OptimizerState.zeros(net), rng)


def evaluate(net: Network, spec: DropoutSpec, ds: LabeledDataset, chunk: int = 5000) -> tuple[int, float]:
    """Errors of the mean network; ties in the argmax go to the lowest class index."""
    mean_net = to_mean_network(net, spec)
    errors = 0
    for start in range(0, len(ds), chunk):
        out = mean_net.predict(ds.features[start:start + chunk])
        errors += int(np.count_nonzero(out.argmax(axis=1) != ds.labels[start:start + chunk]))
    return errors, errors / len(ds)


def max_hidden_sq_norm(net: Network, include_output: bool = False) -> float:
    last = len(net.layers) - 1
    worst = 0.0
    for i, layer in enumerate(net.layers):
        if layer.has_weights() and (i < last or include_output):
            worst = max(worst, float(row_sq_norms(layer.incoming()).max()))
    return worst


def _snapshot(net: Network, epoch: int, batch: int, loss: float) -> dict:
    return {
        "epoch": epoch, "batch": batch, "loss": loss,
        "max_abs": [{k: float(np.nanmax(np.abs(v))) for k, v in p.items()} for p in net.params()],
    }


def train(config: TrainConfig, train_ds: LabeledDataset, test_ds: LabeledDataset | None = None,
          state: TrainState | None = None, metrics_path=None, checkpoint_path=None,
          use_masks: bool = True, callback=None) -> tuple[Network, list[MetricsRow]]:
    """Train until ``config.epochs`` epochs have completed.

    Each minibatch draws fresh per-case dropout masks, runs the stochastic
    network forward and backward, and takes one :func:`sgd_update` step.
    Learning rate and momentum advance once per epoch. Pass ``state`` to
    resume from a checkpoint. ``use_masks=False`` skips the mask path
    entirely and is only valid when dropout is off.
    """
    if state is None:
        state = init_state(config)
    spec, opt = config.dropout, config.optimizer
    if not use_masks and not spec.is_off():
        raise ValueError("use_masks=False requires all retain probabilities to be 1")
    net, rng = state.net, state.rng
    if train_ds.dim != int(np.prod(net.input_shape)):
        raise DataError(f"dataset has {train_ds.dim} features, network expects {net.input_shape}")
    metrics_path = metrics_path or config.trainer.metrics_path or None
    checkpoint_path = checkpoint_path or config.trainer.checkpoint_path or None
    rows = []
    started = time.perf_counter()
    for epoch in range(state.epoch, config.epochs):
        loss_sum, errors = 0.0, 0
        for b, idx in enumerate(batch_indices(len(train_ds), opt.batch_size, rng)):
            X, y = train_ds.features[idx], train_ds.labels[idx]
            if use_masks:
                masks = sample_case_masks(rng, spec, net, len(idx))
                out, trace = network_forward(net, X, masks, "stochastic")
            else:
                out, trace = network_forward(net, X)
            loss, grad = softmax_xent(trace.zs[-1], y)
            if not np.isfinite(loss):
                snap = _snapshot(net, epoch, b, loss)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}", snap)
            loss_sum += loss * len(idx)
            errors += int(np.count_nonzero(out.argmax(axis=1) != y))
            sgd_update(net, state.optimizer, network_backward(net, trace, grad), opt, epoch)
        state.optimizer.t = epoch + 1
        if opt.max_sq_norm is not None:
            worst = max_hidden_sq_norm(net, opt.constrain_output)
            if worst > opt.max_sq_norm + 1e-9:
                raise AssertionError(f"max-norm violated after epoch {epoch}: {worst}")
        test_err = None
        if test_ds is not None and (epoch + 1) % config.trainer.eval_every == 0:
            test_err = evaluate(net, spec, test_ds)[1]
        wall = time.perf_counter() - started if config.trainer.record_wallclock else 0.0
        row = MetricsRow(epoch, lr_at(opt, epoch), momentum_at(opt, epoch), loss_sum / len(train_ds),
                         errors / len(train_ds), test_err, wall)
        rows.append(row)
        log.info("epoch %d lr %.4g momentum %.4g xent %.4f train_err %.4f test_err %s",
                 epoch, row.lr, row.momentum, row.train_xent, row.train_err, test_err)
        if metrics_path:
            append_metrics(metrics_path, row)
        if checkpoint_path:
            checkpoint_save(checkpoint_path, state)
        if callback is not None:
            callback(state, row)
    return net, rows


def load_datasets(config: TrainConfig) -> tuple[LabeledDataset, LabeledDataset | None]:
    d = config.data
    if d.mnist_dir:
        train_ds, test_ds = load_mnist(d.mnist_dir, "train"), load_mnist(d.mnist_dir, "test")
    elif d.train_images and d.train_labels:
        train_ds = load_feature_idx(d.train_images, d.train_labels)
        test_ds = load_feature_idx(d.test_images, d.test_labels, train_ds.class_count) if d.test_images else None
    else:
        raise FileNotFoundError("no training data configured (set data.mnist_dir or data.train_images/labels)")
    if d.train_subset:
        order = RandomSource(d.subset_seed).permutation(len(train_ds))
        train_ds = train_ds.take(np.sort(order[:d.train_subset]))
    if d.standardize:
        parts, _, _ = standardize(train_ds, *([test_ds] if test_ds is not None else []))
        train_ds = parts[0]
        test_ds = parts[1] if test_ds is not None else None
    return train_ds, test_ds


# --- checkpoints -------------------------------------------------------------


def _tensors(state: TrainState) -> list[tuple[str, np.ndarray]]:
    out = []
    for i, layer in enumerate(state.net.layers):
        for name, value in layer.params().items():
            out.append((f"param.{i}.{name}", value))
        conn = getattr(layer, "connectivity", None)
        if conn is not None:
            out.append((f"conn.{i}", conn.astype(np.float64)))
    for i, vel in enumerate(state.optimizer.velocity):
        for name, value in vel.items():
            out.append((f"velocity.{i}.{name}", value))
    return out


def checkpoint_save(path, state: TrainState) -> None:
    """Write a versioned, CRC-protected checkpoint.

    Layout: magic, u32 version, u32 header length, JSON header, float64
    little-endian payloads in header order, u32 CRC-32 of all preceding bytes.
    """
    tensors = _tensors(state)
    header = {
        "input_shape": list(state.net.input_shape),
        "layers": state.net.describe(),
        "epoch": state.optimizer.t,
        "seed": state.rng.seed,
        "rng": state.rng.get_state(),
        "tensors": [{"name": n, "shape": list(v.shape)} for n, v in tensors],
    }
    head = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
    buf.write(head)
    for _, v in tensors:
        buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    body = buf.getvalue()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    tmp.replace(path)


def checkpoint_load(path) -> TrainState:
    raw = Path(path).read_bytes()
    n = len(CHECKPOINT_MAGIC)
    if raw[:n] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < n + 12:
        raise CheckpointError(f"{path}: truncated")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, head_len = struct.unpack("<II", body[n:n + 8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(body[n + 8:n + 8 + head_len])
    offset = n + 8 + head_len
    arrays = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arrays[t["name"]] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(t["shape"]).astype(np.float64)
        offset += 8 * count
    if offset != len(body):
        raise CheckpointError(f"{path}: payload length does not match header")
    net = skeleton_network(header["layers"], header["input_shape"])
    velocity = []
    for i, layer in enumerate(net.layers):
        layer.set_params({name: arrays[f"param.{i}.{name}"] for name in layer.params()})
        if f"conn.{i}" in arrays:
            layer.connectivity = arrays[f"conn.{i}"].astype(bool)
        velocity.append({name: arrays[f"velocity.{i}.{name}"] for name in layer.params()})
    rng = RandomSource(header["seed"])
    rng.set_state(header["rng"])
    return TrainState(net, OptimizerState(velocity, header["epoch"]), rng)


# --- feature images -------------------------------------------------------------


def feature_grid(net: Network, layer_index: int, tile_shape, units=None) -> np.ndarray:
    """Tile each unit's incoming weights as a min-max normalised uint8 image.

    Tiles are laid out row-major on a near-square grid with 1-pixel black
    separators. A constant tile maps to mid-grey (128).
    """
    layer = net.layers[layer_index]
    rows = layer.incoming()
    if rows is None:
        raise ValueError(f"layer {layer_index} has no incoming weights")
    h, w = tile_shape
    if rows.shape[1] != h * w:
        raise ValueError(f"{rows.shape[1]} incoming weights cannot be shaped as {h}x{w}")
    if units is not None:
        rows = rows[np.asarray(units)]
    k = rows.shape[0]
    cols = int(np.ceil(np.sqrt(k)))
    nrows = int(np.ceil(k / cols))
    img = np.zeros((nrows * h + nrows - 1, cols * w + cols - 1), dtype=np.uint8)
    for u in range(k):
        v = rows[u]
        lo, hi = v.min(), v.max()
        tile = np.full(h * w, 128.0) if hi == lo else (v - lo) / (hi - lo) * 255.0
        r, c = divmod(u, cols)
        img[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = np.rint(tile).reshape(h, w)
    return img


def write_pgm(path, img: np.ndarray) -> None:
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)


def export_features(net: Network, layer_index: int, tile_shape, path, n_units: int | None = 100,
                    rng: RandomSource | None = None) -> np.ndarray:
    """Write a PGM grid of ``n_units`` features (random units if ``rng`` is given)."""
    total = net.layers[layer_index].incoming().shape[0] if net.layers[layer_index].incoming() is not None else 0
    units = None
    if n_units is not None and n_units < total:
        units = np.sort(rng.generator.choice(total, n_units, replace=False)) if rng else np.arange(n_units)
    img = feature_grid(net, layer_index, tile_shape, units)
    write_pgm(path, img)
    return img


def config_summary(config: TrainConfig) -> dict:
    return asdict(config)
