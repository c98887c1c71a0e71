"""Figures written next to the CSV/JSON outputs (non-interactive backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_training(records, path):
    """Accuracy, per-layer mean H_s and overall sparsity over epochs."""
    epochs = [r["epoch"] for r in records]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    ax = axes[0]
    ax.plot(epochs, [r["train_acc"] for r in records], marker="o", label="train")
    ax.plot(epochs, [r["test_acc"] for r in records], marker="s", label="test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.legend()
    ax = axes[1]
    hs = np.array([r["hoyer"] for r in records], dtype=float)
    for k in range(hs.shape[1] if hs.ndim == 2 else 0):
        ax.plot(epochs, hs[:, k], marker=".", label=f"layer {k + 1}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean Hoyer sparsity")
    ax.legend(fontsize="small")
    ax = axes[2]
    ax.plot(epochs, [r["sparsity"] for r in records], marker="o", color="k")
    ax.set_xlabel("epoch")
    ax.set_ylabel("fraction of inactive weights")
    ax.set_ylim(0, 1)
    return _save(fig, path)


def plot_hoyer_curve(d, rows, path, mc=None):
    """E[H_s] against p; `mc` optionally holds (p, mean, stderr) points."""
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    ps = [r[0] for r in rows]
    ax.plot(ps, [r[1] for r in rows], label="closed form")
    if mc:
        ax.errorbar(
            [m[0] for m in mc], [m[1] for m in mc], yerr=[3 * m[2] for m in mc],
            fmt="^", label="Monte Carlo (3 s.e.)",
        )
    ax.set_xlabel("p")
    ax.set_ylabel("expected Hoyer sparsity")
    ax.set_title(f"d = {d}")
    ax.legend()
    return _save(fig, path)


def plot_layer_hoyer(reports, path):
    """Histogram of per-neuron H_s for each weight layer."""
    n = len(reports)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
    for ax, rep in zip(axes[0], reports):
        h = rep.neuron_hoyer[np.isfinite(rep.neuron_hoyer)]
        ax.hist(h, bins=20, range=(0, 1), color="tab:blue")
        ax.set_title(f"layer {rep.layer} {rep.kind}, dim {rep.dim}, p={rep.p:g}", fontsize="small")
        ax.set_xlabel("Hoyer sparsity")
    return _save(fig, path)


def plot_correlation(corr, title, path):
    fig, ax = plt.subplots(figsize=(3.8, 3.4))
    im = ax.imshow(np.nan_to_num(corr), vmin=-1, vmax=1, cmap="RdBu_r")
    fig.colorbar(im, ax=ax)
    ax.set_title(title, fontsize="small")
    ax.set_xlabel("neuron")
    ax.set_ylabel("neuron")
    return _save(fig, path)
