"""Run configuration (JSON) and network presets.

Unknown keys are rejected at every level: a typo in `p` or `s_expect`
silently falling back to a default would invalidate an experiment.
"""

import json
import os
from dataclasses import asdict, dataclass, field

from lpsphere.errors import ConfigError
from lpsphere.geometry import P_MAX, P_MIN

DATA_SOURCES = ("synthetic", "idx", "csv")
PRESETS = ("toy-mlp", "mnist-small", "mnist-table2", "fashion-table2")

_DATASET_KEYS = {
    "synthetic": {"source", "kind", "n_train", "n_test", "seed_offset"},
    "idx": {"source", "train_images", "train_labels", "test_images", "test_labels", "limit", "test_limit"},
    "csv": {"source", "train_path", "test_path", "label", "scale", "test_fraction"},
}
_PATH_KEYS = ("train_images", "train_labels", "test_images", "test_labels", "train_path", "test_path")
_NETWORK_KEYS = {"preset", "layers", "p", "layer_p", "hidden"}
_OPTIM_KEYS = {"method", "gamma", "norm"}
_LR_KEYS = {"kind", "initial", "factor", "every", "base", "peak", "period", "points", "divide_by_batch"}
_EVOLUTION_KEYS = {"enabled", "interval", "alpha_drop", "t_end", "gap", "s_expect", "s_init"}
_TOP_KEYS = {
    "dataset", "network", "optimizer", "lr", "evolution",
    "epochs", "batch_size", "seed", "output_dir", "checkpoint_every",
}


def _dense_head(hidden, n_classes):
    out = []
    for h in hidden:
        out += [{"type": "dense", "out": h}, {"type": "relu"}]
    return out + [{"type": "dense", "out": n_classes}]


def preset_layers(name, n_classes=10, hidden=None):
    """Layer descriptors (without p) of a named architecture.

    ``mnist-table2`` / ``fashion-table2`` are the full-size six-layer nets;
    ``mnist-small`` keeps the MNIST conv stack and shrinks the dense head;
    ``toy-mlp`` is two hidden dense layers for low-dimensional data.
    """
    if name == "toy-mlp":
        return _dense_head(hidden or [64, 64], n_classes)
    if name in ("mnist-small", "mnist-table2"):
        convs = [
            {"type": "conv2d", "out": 8, "kernel": 3},
            {"type": "relu"},
            {"type": "conv2d", "out": 12, "kernel": 3},
            {"type": "relu"},
            {"type": "maxpool", "size": 2},
            {"type": "conv2d", "out": 16, "kernel": 3},
            {"type": "relu"},
            {"type": "maxpool", "size": 2},
            {"type": "flatten"},
        ]
        head = hidden or ([64, 32] if name == "mnist-small" else [256, 64])
        return convs + _dense_head(head, n_classes)
    if name == "fashion-table2":
        convs = [
            {"type": "conv2d", "out": 16, "kernel": 5, "stride": 2, "padding": 2, "bias": False},
            {"type": "batchnorm"},
            {"type": "relu"},
            {"type": "conv2d", "out": 32, "kernel": 3, "padding": 1, "bias": False},
            {"type": "batchnorm"},
            {"type": "relu"},
            {"type": "maxpool", "size": 2},
            {"type": "conv2d", "out": 64, "kernel": 3, "padding": 1, "bias": False},
            {"type": "batchnorm"},
            {"type": "relu"},
            {"type": "flatten"},
        ]
        return convs + _dense_head(hidden or [512, 64], n_classes)
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


def _check_keys(section, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object, got {type(data).__name__}")
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"{section}: unknown key(s) {extra}")


def _check_p(name, p):
    if not isinstance(p, (int, float)) or not P_MIN <= float(p) <= P_MAX:
        raise ConfigError(f"{name}: p must lie in [{P_MIN}, {P_MAX}], got {p!r}")
    return float(p)


@dataclass
class RunConfig:
    dataset: dict
    network: dict
    optimizer: dict = field(default_factory=lambda: {"method": "lpsgd-m", "gamma": 0.9})
    lr: dict = field(default_factory=lambda: {"kind": "step_decay", "initial": 0.02, "factor": 0.3})
    evolution: dict | None = None
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    output_dir: str = "run"
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data):
        _check_keys("config", data, _TOP_KEYS)
        for req in ("dataset", "network"):
            if req not in data:
                raise ConfigError(f"config: missing required field {req!r}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        base = os.path.dirname(os.path.abspath(path))
        if isinstance(data, dict):
            ds = data.get("dataset")
            if isinstance(ds, dict):
                for key in _PATH_KEYS:
                    v = ds.get(key)
                    if isinstance(v, str) and v and not os.path.isabs(v):
                        ds[key] = os.path.join(base, v)
            out = data.get("output_dir", "run")
            if isinstance(out, str) and not os.path.isabs(out):
                data["output_dir"] = os.path.join(base, out)
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self):
        ds = self.dataset
        if not isinstance(ds, dict) or ds.get("source") not in DATA_SOURCES:
            raise ConfigError(f"dataset.source: must be one of {DATA_SOURCES}")
        _check_keys("dataset", ds, _DATASET_KEYS[ds["source"]])
        if ds["source"] == "synthetic":
            for key in ("kind", "n_train"):
                if key not in ds:
                    raise ConfigError(f"dataset.{key}: required for synthetic data")
            if int(ds["n_train"]) <= 0:
                raise ConfigError("dataset.n_train: training set is empty")
        elif ds["source"] == "idx":
            for key in ("train_images", "train_labels"):
                if not ds.get(key):
                    raise ConfigError(f"dataset.{key}: missing dataset path")
        else:
            if not ds.get("train_path"):
                raise ConfigError("dataset.train_path: missing dataset path")
            frac = ds.get("test_fraction", 0.2)
            if not 0.0 <= frac < 1.0:
                raise ConfigError(f"dataset.test_fraction: must lie in [0, 1), got {frac}")
        self._check_files()

        net = self.network
        _check_keys("network", net, _NETWORK_KEYS)
        if ("preset" in net) == ("layers" in net):
            raise ConfigError("network: give exactly one of 'preset' or 'layers'")
        if "preset" in net and net["preset"] not in PRESETS:
            raise ConfigError(f"network.preset: unknown preset {net['preset']!r}")
        _check_p("network.p", net.get("p", 2.0))
        layer_p = net.get("layer_p")
        if layer_p is not None:
            if not isinstance(layer_p, list) or not layer_p:
                raise ConfigError("network.layer_p: expected a non-empty list")
            ps = [_check_p(f"network.layer_p[{i}]", p) for i, p in enumerate(layer_p)]
            if "preset" in net and ps[0] < max(ps):
                raise ConfigError("network.layer_p: presets keep the first layer's p highest")
        for i, desc in enumerate(net.get("layers", [])):
            if "p" in desc:
                _check_p(f"network.layers[{i}].p", desc["p"])

        _check_keys("optimizer", self.optimizer, _OPTIM_KEYS)
        if self.optimizer.get("method", "lpsgd-m") not in ("lpsgd", "lpsgd-m"):
            raise ConfigError(f"optimizer.method: unknown optimizer {self.optimizer['method']!r}")
        g = self.optimizer.get("gamma", 0.9)
        if not 0.0 <= g < 1.0:
            raise ConfigError(f"optimizer.gamma: must lie in [0, 1), got {g}")
        _check_keys("lr", self.lr, _LR_KEYS)
        if self.evolution is not None:
            _check_keys("evolution", self.evolution, _EVOLUTION_KEYS)
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed: must be a non-negative integer, got {self.seed!r}")
        if int(self.epochs) < 0:
            raise ConfigError(f"epochs: must be >= 0, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if int(self.checkpoint_every) < 0:
            raise ConfigError("checkpoint_every: must be >= 0")

    def _check_files(self):
        for key in _PATH_KEYS:
            v = self.dataset.get(key)
            if v is not None and not os.path.exists(v):
                raise ConfigError(f"dataset.{key}: file not found: {v}")

    @property
    def evolution_enabled(self):
        return bool(self.evolution) and self.evolution.get("enabled", True)

    def layer_descriptors(self, n_classes):
        """Concrete layer list with p filled in per weight layer."""
        return network_descriptors(self.network, n_classes)


def network_descriptors(net, n_classes):
    """Layer descriptors of a `network` config section, p set on every weight layer."""
    if "preset" in net:
        layers = preset_layers(net["preset"], n_classes, net.get("hidden"))
    else:
        layers = [dict(d) for d in net["layers"]]
    default_p = float(net.get("p", 2.0))
    weight_idx = [i for i, d in enumerate(layers) if d.get("type") in ("dense", "conv2d")]
    layer_p = net.get("layer_p")
    if layer_p is not None and len(layer_p) != len(weight_idx):
        raise ConfigError(
            f"network.layer_p: {len(layer_p)} values for {len(weight_idx)} weight layers"
        )
    for k, i in enumerate(weight_idx):
        if layer_p is not None:
            layers[i]["p"] = float(layer_p[k])
        else:
            layers[i].setdefault("p", default_p)
    return layers
