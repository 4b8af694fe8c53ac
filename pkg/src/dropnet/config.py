"""Network descriptors and the flat ``key = value`` training configuration.

A network is written as a whitespace-separated list of layer descriptors::

    dense:800:relu  dense:800:relu  softmax:10
    conv:16:5x5:1:relu  pool:max:3:2  lrn:9:0.001:0.75  local:16:3x3  softmax:10

A bare integer ``800`` means a dense layer with the configured hidden
activation; the last bare integer takes the output activation.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convnet import ConvLayer, LocalLayer, LrnLayer, LrnSpec, PoolLayer, PoolSpec
from .dropout import DropoutSpec
from .layers import ConsistencyError, DenseLayer, Network
from .numeric import RandomSource, ShapeError, gauss_sample
from .optim import OptimizerConfig


class ConfigError(ValueError):
    pass


def _parse_size(text: str) -> tuple[int, int]:
    if "x" in text:
        h, w = text.split("x")
        return int(h), int(w)
    return int(text), int(text)


@dataclass
class NetworkSpec:
    input_shape: tuple = (784,)
    layers: tuple = ("800", "800", "10")
    hidden_activation: str = "relu"
    output: str = "softmax"
    init_sd: float = 0.01
    hidden_bias: float = 0.0

    def descriptors(self) -> list[str]:
        out = []
        n = len(self.layers)
        for i, d in enumerate(self.layers):
            d = str(d)
            if d.isdigit():
                d = f"dense:{d}:{self.output if i == n - 1 else self.hidden_activation}"
            out.append(d)
        return out


def build_layer(desc: str, input_shape: tuple, rng: RandomSource, sd: float = 0.01, bias: float = 0.0):
    parts = desc.split(":")
    kind, args = parts[0], parts[1:]
    try:
        if kind in ("dense", "softmax", "linear", "logistic", "relu"):
            act = kind if kind != "dense" else (args[1] if len(args) > 1 else "relu")
            n_out = int(args[0])
            return DenseLayer(gauss_sample(rng, 0.0, sd, (int(np.prod(input_shape)), n_out)), np.full(n_out, bias), act)
        if kind == "conv":
            stride = int(args[2]) if len(args) > 2 else 1
            act = args[3] if len(args) > 3 else "relu"
            return ConvLayer.init(rng, input_shape[0], int(args[0]), _parse_size(args[1]), stride, act, sd, bias)
        if kind == "local":
            stride = int(args[2]) if len(args) > 2 else 1
            act = args[3] if len(args) > 3 else "relu"
            return LocalLayer.init(rng, input_shape, int(args[0]), _parse_size(args[1]), stride, act, sd, bias)
        if kind == "pool":
            return PoolLayer(PoolSpec(args[0], int(args[1]), int(args[2])))
        if kind == "lrn":
            return LrnLayer(LrnSpec(int(args[0]), float(args[1]), float(args[2])))
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"bad layer descriptor {desc!r}: {exc}") from None
    raise ConfigError(f"unknown layer kind in {desc!r}")


def build_network(spec: NetworkSpec, rng: RandomSource) -> Network:
    shape = tuple(spec.input_shape)
    layers = []
    descriptors = spec.descriptors()
    try:
        for i, desc in enumerate(descriptors):
            bias = 0.0 if i == len(descriptors) - 1 else spec.hidden_bias
            layer = build_layer(desc, shape, rng, spec.init_sd, bias)
            shape = layer.output_shape(shape)
            layers.append(layer)
        return Network(layers, spec.input_shape)
    except (ShapeError, ConsistencyError) as exc:
        raise ConfigError(f"network does not fit together: {exc}") from None


def skeleton_network(descriptors, input_shape) -> Network:
    """Network with the right shapes and zero weights (used when loading checkpoints)."""
    rng = RandomSource(0)
    shape = tuple(input_shape)
    layers = []
    for desc in descriptors:
        layer = build_layer(desc, shape, rng, 0.0, 0.0)
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Network(layers, input_shape)


@dataclass
class DataConfig:
    mnist_dir: str = ""
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_subset: int = 0
    subset_seed: int = 0
    standardize: bool = False


@dataclass
class TrainerOptions:
    eval_every: int = 1
    metrics_path: str = ""
    checkpoint_path: str = ""
    record_wallclock: bool = True


@dataclass
class TrainConfig:
    network: NetworkSpec = field(default_factory=NetworkSpec)
    dropout: DropoutSpec = field(default_factory=DropoutSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    trainer: TrainerOptions = field(default_factory=TrainerOptions)
    epochs: int = 3000
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")


PRESETS = {
    # fine-tuning: small constant learning rate, no norm constraint
    "finetune": {"optimizer.eps0": "1.0", "optimizer.decay_f": "1.0", "optimizer.max_sq_norm": "none",
                 "epochs": "1000"},
    "mnist": {},
}


def _convert(text: str, current):
    text = text.strip()
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(current, str):
        return text
    if text.lower() in ("none", ""):
        return None
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float) or current is None:
        return float(text)
    if isinstance(current, tuple):
        items = text.replace(",", " ").split()
        return tuple(items)
    return text


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _set(cfg: dict, key: str, value: str, sections: dict) -> None:
    if key in ("epochs", "seed"):
        try:
            cfg[key] = int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
        return
    if "." not in key:
        raise ConfigError(f"unknown config key {key!r}")
    section, name = key.split(".", 1)
    if section not in sections:
        raise ConfigError(f"unknown config section in {key!r}")
    fields = sections[section]
    if name not in fields:
        raise ConfigError(f"unknown config key {key!r}")
    current = fields[name]
    try:
        if section == "dropout" and name == "hidden_retain":
            vals = [float(v) for v in value.replace(",", " ").split()]
            cfg[section][name] = vals[0] if len(vals) == 1 else tuple(vals)
        elif section == "network" and name == "input_shape":
            cfg[section][name] = tuple(int(v) for v in value.lower().replace("x", " ").replace(",", " ").split())
        else:
            cfg[section][name] = _convert(value, current)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def config_from_dict(values: dict[str, str]) -> TrainConfig:
    defaults = TrainConfig()
    sections = {s: dataclasses.asdict(getattr(defaults, s)) for s in ("network", "optimizer", "data", "trainer")}
    sections["dropout"] = {"input_retain": 0.8, "hidden_retain": 0.5}
    cfg = {s: {} for s in sections}
    values = dict(values)
    preset = values.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        values = {**PRESETS[preset], **values}
    for key, value in values.items():
        _set(cfg, key, value, sections)
    try:
        return TrainConfig(
            network=NetworkSpec(**{**sections["network"], **cfg["network"]}),
            dropout=DropoutSpec(**{**sections["dropout"], **cfg["dropout"]}),
            optimizer=OptimizerConfig(**{**sections["optimizer"], **cfg["optimizer"]}),
            data=DataConfig(**{**sections["data"], **cfg["data"]}),
            trainer=TrainerOptions(**{**sections["trainer"], **cfg["trainer"]}),
            epochs=cfg.get("epochs", defaults.epochs),
            seed=cfg.get("seed", defaults.seed),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict[str, str] | None = None) -> TrainConfig:
    """Read a config file (optional) and apply ``--key=value`` style overrides on top."""
    try:
        values = parse_key_values(Path(path).read_text()) if path else {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    values.update(overrides or {})
    return config_from_dict(values)


def config_to_text(cfg: TrainConfig) -> str:
    lines = [f"seed = {cfg.seed}", f"epochs = {cfg.epochs}"]
    for section in ("network", "dropout", "optimizer", "data", "trainer"):
        for name, value in dataclasses.asdict(getattr(cfg, section)).items():
            if isinstance(value, (tuple, list)):
                value = " ".join(str(v) for v in value)
            lines.append(f"{section}.{name} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"
