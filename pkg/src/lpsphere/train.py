"""Training loop: minibatch L_pSGD(-m) with optional drop/grow mask evolution.

A run directory receives

    config.json       the validated configuration
    metrics.jsonl     one record per epoch (epoch 0 is the initial evaluation)
    timing.jsonl      wall-clock seconds per epoch (kept apart so that
                      metrics.jsonl is byte-reproducible)
    mask_edits.jsonl  one row per edited neuron per evolution tick
    checkpoint.lpck   final state (plus checkpoint_eNNN.lpck if requested)
    training.png      accuracy / Hoyer sparsity / sparsity curves

All randomness comes from generators derived from (seed, purpose tag,
counter), so a run resumed from a checkpoint replays exactly.
"""

import json
import logging
import math
import os
import time

import numpy as np

from lpsphere.checkpoint import load_checkpoint, save_checkpoint
from lpsphere.config import RunConfig, network_descriptors
from lpsphere.data import load_csv, load_idx, synthetic_dataset
from lpsphere.errors import ConfigError, TrainingDiverged
from lpsphere.evolution import EvolutionSchedule, evolution_tick, init_topology
from lpsphere.nn import BatchNorm, Network, softmax_cross_entropy
from lpsphere.optim import LrSchedule, Optimizer, stationarity_residual
from lpsphere.plotting import plot_training
from lpsphere.sparsity import layer_mean_hoyer, overall_sparsity, standard_sparsity

log = logging.getLogger(__name__)

TAG_DATA, TAG_SPLIT, TAG_INIT, TAG_TOPOLOGY, TAG_SHUFFLE, TAG_EVOLVE = range(1, 7)
PROBE_SIZE = 512
DEFAULT_SYNTHETIC_TEST = 2000
DEFAULT_HOLDOUT = 0.1

METRIC_FIELDS = (
    "epoch", "iteration", "lr", "loss", "train_acc", "test_acc", "hoyer", "sparsity",
    "layer_sparsity", "zeta_w", "zeta_g", "residual", "max_norm_dev", "n_dropped", "n_grown",
)


def derived_rng(seed, tag, *counters):
    return np.random.default_rng([int(seed), tag, *[int(c) for c in counters]])


def _split(ds, frac, rng):
    n_test = int(round(frac * len(ds)))
    perm = rng.permutation(len(ds))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def prepare_data(cfg):
    """(train, test) datasets for a config."""
    ds = cfg.dataset
    seed = cfg.seed
    if ds["source"] == "synthetic":
        off = int(ds.get("seed_offset", 0))
        train = synthetic_dataset(ds["kind"], ds["n_train"], [seed, TAG_DATA, off, 0])
        test = synthetic_dataset(
            ds["kind"], ds.get("n_test", DEFAULT_SYNTHETIC_TEST), [seed, TAG_DATA, off, 1]
        )
    elif ds["source"] == "idx":
        train = load_idx(ds["train_images"], ds["train_labels"], ds.get("limit"))
        if ds.get("test_images") and ds.get("test_labels"):
            test = load_idx(ds["test_images"], ds["test_labels"], ds.get("test_limit"))
        else:
            train, test = _split(train, DEFAULT_HOLDOUT, derived_rng(seed, TAG_SPLIT))
    else:
        train = load_csv(ds["train_path"], ds.get("label", -1), ds.get("scale", False))
        if ds.get("test_path"):
            test = load_csv(ds["test_path"], ds.get("label", -1), ds.get("scale", False))
        else:
            train, test = _split(train, ds.get("test_fraction", 0.2), derived_rng(seed, TAG_SPLIT))
    if len(train) == 0:
        raise ConfigError("dataset: training set is empty")
    return train, test


def _accuracy(net, ds):
    if len(ds) == 0:
        return None
    return float(np.mean(net.predict(ds.x) == ds.y))


def _bn_state(net):
    return [
        (l.running_mean.copy(), l.running_var.copy()) for l in net.layers if isinstance(l, BatchNorm)
    ]


def _restore_bn(net, saved):
    for layer, (m, v) in zip([l for l in net.layers if isinstance(l, BatchNorm)], saved):
        layer.running_mean, layer.running_var = m, v


def probe_gradients(net, ds):
    """Gradients on a fixed training probe without touching batch-norm statistics."""
    n = min(PROBE_SIZE, len(ds))
    saved = _bn_state(net)
    loss, _, grads = net.loss_and_grads(ds.x[:n], ds.y[:n], train=True)
    _restore_bn(net, saved)
    return loss, grads


def _finite_grads(grads):
    for g in grads.weight + grads.bias:
        if g is not None and not np.all(np.isfinite(g)):
            return False
    return all(np.all(np.isfinite(v)) for e in grads.extra if e for v in e.values())


class Trainer:
    def __init__(self, cfg, train=None, test=None, init=True):
        self.cfg = cfg
        if train is None:
            train, test = prepare_data(cfg)
        self.train, self.test = train, test
        n_classes = max(train.n_classes, test.n_classes if test is not None else 0)
        self.n_classes = n_classes
        self.net = Network(train.x.shape[1:], cfg.layer_descriptors(n_classes))
        if init:
            self.net.init_weights(derived_rng(cfg.seed, TAG_INIT))
        opt = cfg.optimizer
        self.opt = Optimizer(
            self.net, opt.get("method", "lpsgd-m"), opt.get("gamma", 0.9), opt.get("norm", "p")
        )
        self.lr = LrSchedule(**cfg.lr)
        self.iters_per_epoch = math.ceil(len(train) / cfg.batch_size)
        self.schedule = None
        if cfg.evolution_enabled:
            params = {k: v for k, v in cfg.evolution.items() if k != "enabled"}
            self.schedule = EvolutionSchedule(**params)
            self.schedule.resolve(self.iters_per_epoch, self.iters_per_epoch * cfg.epochs)
            if init:
                init_topology(self.net, self.schedule.s_init, derived_rng(cfg.seed, TAG_TOPOLOGY))
                self.opt.reset_state()
        self.epoch = 0
        self.last_lr = None

    # persistence

    def state_arrays(self):
        arrays = {}
        for i, layer in enumerate(self.net.layers):
            if layer.trainable:
                arrays[f"layer{i:02d}.weight"] = layer.weight
                arrays[f"layer{i:02d}.mask"] = layer.mask
                if layer.bias is not None:
                    arrays[f"layer{i:02d}.bias"] = layer.bias
                st = self.opt.states[i]
                arrays[f"opt{i:02d}.v"] = st.v
                arrays[f"opt{i:02d}.mu_w"] = st.mu_w
                if st.mu_b is not None:
                    arrays[f"opt{i:02d}.mu_b"] = st.mu_b
            elif isinstance(layer, BatchNorm):
                for name in ("gamma", "beta", "running_mean", "running_var"):
                    arrays[f"layer{i:02d}.{name}"] = getattr(layer, name)
        for (i, name), mu in self.opt.extra_momentum.items():
            arrays[f"opt{i:02d}.{name}_mu"] = mu
        return arrays

    def state_meta(self):
        return {
            "config": self.cfg.to_dict(),
            "epoch": self.epoch,
            "iteration": self.opt.t,
            "schedule": None if self.schedule is None else self.schedule.to_dict(),
            "rng": {"seed": int(self.cfg.seed), "scheme": "derived(seed, tag, counter)"},
            "input_shape": list(self.net.input_shape),
            "n_classes": self.n_classes,
        }

    def save(self, path):
        save_checkpoint(path, self.state_arrays(), self.state_meta())

    @classmethod
    def from_checkpoint(cls, path, output_dir=None, epochs=None):
        arrays, meta = load_checkpoint(path)
        data = dict(meta["config"])
        if output_dir is not None:
            data["output_dir"] = output_dir
        if epochs is not None:
            data["epochs"] = epochs
        cfg = RunConfig.from_dict(data)
        self = cls(cfg, init=False)
        self.restore(arrays, meta)
        return self

    def restore(self, arrays, meta):
        _restore_layers(self.net, arrays)
        for i, st in self.opt.states.items():
            st.v = arrays[f"opt{i:02d}.v"].copy()
            st.mu_w = arrays[f"opt{i:02d}.mu_w"].copy()
            if st.mu_b is not None:
                st.mu_b[:] = arrays[f"opt{i:02d}.mu_b"]
        for (i, name), mu in self.opt.extra_momentum.items():
            mu[:] = arrays[f"opt{i:02d}.{name}_mu"]
        self.opt.t = int(meta["iteration"])
        self.epoch = int(meta["epoch"])
        if meta["schedule"] is not None:
            self.schedule = EvolutionSchedule(**meta["schedule"])

    # training

    def _diverged(self, loss, lr):
        diag = {
            "epoch": self.epoch + 1,
            "iteration": self.opt.t,
            "loss": None if math.isnan(loss) else loss,
            "lr": lr,
            "zeta_w": None if self.schedule is None else self.schedule.zeta_w,
            "zeta_g": None if self.schedule is None else self.schedule.zeta_g,
            "layer_norm_dev": [l.norm_deviation() for l in self.net.weight_layers],
        }
        os.makedirs(self.cfg.output_dir, exist_ok=True)
        with open(os.path.join(self.cfg.output_dir, "diverged.json"), "w") as fh:
            json.dump(diag, fh, indent=2, sort_keys=True)
        return TrainingDiverged(
            f"non-finite loss or gradient at epoch {diag['epoch']}, iteration {diag['iteration']}", diag
        )

    def train_epoch(self):
        """One pass over the shuffled training set. Returns (mean loss, edits)."""
        cfg = self.cfg
        e = self.epoch + 1
        lr = self.lr.rate(self.epoch, cfg.batch_size)
        self.last_lr = lr
        perm = derived_rng(cfg.seed, TAG_SHUFFLE, e).permutation(len(self.train))
        total = 0.0
        edits = []
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, _, grads = self.net.loss_and_grads(self.train.x[idx], self.train.y[idx])
            if not math.isfinite(loss) or not _finite_grads(grads):
                # a NaN input can hide behind ReLU (finite loss, NaN gradient)
                raise self._diverged(loss, lr)
            total += loss * len(idx)
            self.opt.step(grads, lr)
            if self.schedule is not None:
                t = self.opt.t
                edits += evolution_tick(
                    self.net, self.opt, self.schedule, grads, t, rng=derived_rng(cfg.seed, TAG_EVOLVE, t)
                )
        self.epoch = e
        return total / len(perm), edits

    def record(self, loss, edits=()):
        _, grads = probe_gradients(self.net, self.train)
        layers = [(i, l) for i, l in enumerate(self.net.layers) if l.trainable]
        residual = [
            float(np.mean(stationarity_residual(l.weight, grads.weight[i], l.constraint, l.mask)))
            for i, l in layers
        ]
        return {
            "epoch": self.epoch,
            "iteration": self.opt.t,
            "lr": self.last_lr,
            "loss": float(loss),
            "train_acc": _accuracy(self.net, self.train),
            "test_acc": _accuracy(self.net, self.test),
            "hoyer": [layer_mean_hoyer(l) for _, l in layers],
            "sparsity": overall_sparsity(self.net),
            "layer_sparsity": [standard_sparsity([l.mask]) for _, l in layers],
            "zeta_w": None if self.schedule is None else self.schedule.zeta_w,
            "zeta_g": None if self.schedule is None else self.schedule.zeta_g,
            "residual": residual,
            "max_norm_dev": max(l.norm_deviation() for _, l in layers),
            "n_dropped": int(sum(len(e.dropped) for e in edits)),
            "n_grown": int(sum(len(e.grown) for e in edits)),
        }

    def evaluation_loss(self):
        n = min(PROBE_SIZE, len(self.train))
        logits = self.net.forward(self.train.x[:n], train=False)
        return softmax_cross_entropy(logits, self.train.y[:n])[0]


def _dump(obj):
    return json.dumps(obj, sort_keys=True)


def _trim_jsonl(path, keep):
    """Drop records for which keep(record) is False (used when resuming)."""
    if not os.path.exists(path):
        return
    with open(path) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    with open(path, "w") as fh:
        for r in rows:
            if keep(r):
                fh.write(_dump(r) + "\n")


def run_training(cfg, resume=None):
    """Train per `cfg` (or continue from checkpoint `resume`); returns the last record."""
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, output_dir=cfg.output_dir, epochs=cfg.epochs)
    else:
        trainer = Trainer(cfg)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    paths = {k: os.path.join(out, f"{k}.jsonl") for k in ("metrics", "timing", "mask_edits")}
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(cfg.dumps() + "\n")
    if resume is None:
        for p in paths.values():
            open(p, "w").close()
        rec = trainer.record(trainer.evaluation_loss())
        with open(paths["metrics"], "a") as fh:
            fh.write(_dump(rec) + "\n")
    else:
        e0, t0 = trainer.epoch, trainer.opt.t
        _trim_jsonl(paths["metrics"], lambda r: r["epoch"] <= e0)
        _trim_jsonl(paths["timing"], lambda r: r["epoch"] <= e0)
        _trim_jsonl(paths["mask_edits"], lambda r: r["iteration"] <= t0)
        rec = None
    while trainer.epoch < cfg.epochs:
        t_start = time.perf_counter()
        loss, edits = trainer.train_epoch()
        rec = trainer.record(loss, edits)
        wall = time.perf_counter() - t_start
        with open(paths["metrics"], "a") as fh:
            fh.write(_dump(rec) + "\n")
        with open(paths["timing"], "a") as fh:
            fh.write(_dump({"epoch": rec["epoch"], "wall_time": wall}) + "\n")
        with open(paths["mask_edits"], "a") as fh:
            for ed in edits:
                fh.write(_dump(ed.__dict__) + "\n")
        log.info(
            "epoch %d loss %.4f train %.4f test %s sparsity %.3f",
            rec["epoch"], rec["loss"], rec["train_acc"], rec["test_acc"], rec["sparsity"],
        )
        if cfg.checkpoint_every and rec["epoch"] % cfg.checkpoint_every == 0:
            trainer.save(os.path.join(out, f"checkpoint_e{rec['epoch']:03d}.lpck"))
    trainer.save(os.path.join(out, "checkpoint.lpck"))
    records = read_metrics(paths["metrics"])
    if records:
        plot_training(records, os.path.join(out, "training.png"))
    return rec if rec is not None else (records[-1] if records else None)


def load_network(path):
    """Rebuild the trained network stored in a checkpoint (no dataset needed)."""
    arrays, meta = load_checkpoint(path)
    descs = network_descriptors(meta["config"]["network"], meta["n_classes"])
    net = Network(meta["input_shape"], descs)
    _restore_layers(net, arrays)
    return net, meta


def _restore_layers(net, arrays):
    for i, layer in enumerate(net.layers):
        if layer.trainable:
            layer.weight = arrays[f"layer{i:02d}.weight"].copy()
            layer.mask = arrays[f"layer{i:02d}.mask"].copy()
            if layer.bias is not None:
                layer.bias[:] = arrays[f"layer{i:02d}.bias"]
        elif isinstance(layer, BatchNorm):
            for name in ("gamma", "beta", "running_mean", "running_var"):
                getattr(layer, name)[:] = arrays[f"layer{i:02d}.{name}"]


def read_metrics(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
