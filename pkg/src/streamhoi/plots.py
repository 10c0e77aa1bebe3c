"""Figure writers for run artifacts. Headless (Agg) and timestamp-free."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .exceptions import ConfigurationError

# Pinned PNG text chunk so figure bytes do not vary with the library version
# string; reruns of the same run directory produce identical files.
_METADATA = {"Software": "streamhoi"}


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_METADATA)
    plt.close(fig)
    return path


def plot_loss(loss_history, path, title="training loss"):
    loss = np.asarray(loss_history, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.2, 3.2), constrained_layout=True)
    ax.plot(np.arange(1, loss.size + 1), loss, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    if loss.size and loss.min() > 0 and loss.max() / loss.min() > 50:
        ax.set_yscale("log")
    return _save(fig, path)


def plot_metric_bars(groups, metric, path, title=None, higher_is_better=None):
    """Grouped bar chart from ablation aggregates.

    groups: {"memory=off": {metric: {"mean", "min", "max"}}, ...} as produced
    by run_ablation; whiskers span min..max over seeds.
    """
    names = [k for k, agg in groups.items() if metric in agg]
    if not names:
        raise ConfigurationError(f"no group carries metric {metric!r}")
    means = np.array([groups[n][metric]["mean"] for n in names])
    lows = means - np.array([groups[n][metric]["min"] for n in names])
    highs = np.array([groups[n][metric]["max"] for n in names]) - means
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(names), 3.4),
                           constrained_layout=True)
    x = np.arange(len(names))
    ax.bar(x, means, width=0.6, yerr=[lows, highs], capsize=4,
           color="#4878a8", edgecolor="black", linewidth=0.6)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=15, ha="right", fontsize=8)
    ax.set_ylabel(metric)
    label = title or metric
    if higher_is_better is not None:
        label += " (higher is better)" if higher_is_better else " (lower is better)"
    ax.set_title(label, fontsize=10)
    return _save(fig, path)


def plot_trajectory_overlay(reference, generated, path, max_dims=6):
    """Reference vs generated pose channels, one panel per dimension."""
    ref = np.asarray(getattr(reference, "frames", reference), dtype=np.float64)
    gen = np.asarray(getattr(generated, "frames", generated), dtype=np.float64)
    if ref.shape != gen.shape:
        raise ConfigurationError(
            f"reference {ref.shape} and generated {gen.shape} differ"
        )
    dims = min(ref.shape[1], max_dims)
    fig, axes = plt.subplots(
        dims, 1, figsize=(5.6, 1.35 * dims), sharex=True, constrained_layout=True
    )
    axes = np.atleast_1d(axes)
    t = np.arange(ref.shape[0])
    for d in range(dims):
        ax = axes[d]
        ax.plot(t, ref[:, d], lw=1.2, label="reference", color="#333333")
        ax.plot(t, gen[:, d], lw=1.2, label="generated", color="#c44e52")
        ax.fill_between(t, ref[:, d], gen[:, d], alpha=0.15, color="#c44e52")
        ax.set_ylabel(f"dim {d}", fontsize=8)
    axes[0].legend(fontsize=7, loc="upper right")
    axes[-1].set_xlabel("frame")
    return _save(fig, path)


def plot_segmentation(predicted, target, path):
    """Predicted vs target label ribbons for one clip."""
    pred = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(target, dtype=np.int64)
    if pred.shape != true.shape:
        raise ConfigurationError("predicted and target lengths differ")
    n_classes = int(max(pred.max(), true.max())) + 1
    fig, ax = plt.subplots(figsize=(6.0, 1.8), constrained_layout=True)
    ribbon = np.stack([true, pred])
    ax.imshow(
        ribbon,
        aspect="auto",
        interpolation="nearest",
        cmap="tab20",
        vmin=0,
        vmax=max(n_classes - 1, 1),
    )
    ax.set_yticks([0, 1])
    ax.set_yticklabels(["target", "predicted"], fontsize=8)
    ax.set_xlabel("frame")
    return _save(fig, path)
