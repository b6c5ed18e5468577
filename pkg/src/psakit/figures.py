"""Render report figures to PNG files next to the delimited outputs.

Uses the non-interactive Agg backend; every function writes one file and
closes its figure, so repeated calls are safe in long processes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_training_curves(history, path) -> None:
    """Loss curves (log scale) with the task metric on a twin axis."""
    epochs = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.semilogy(epochs, [r.train_loss for r in history], label="train loss", color="tab:blue")
    ax.semilogy(epochs, [r.val_loss for r in history], label="val loss", color="tab:orange")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.metric for r in history], label="metric", color="tab:green",
             linestyle="--")
    ax2.set_ylabel("metric")
    ax2.set_ylim(0.0, 1.05)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="center right")
    ax.set_title("training curves")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_ab_comparison(ab_result, path) -> None:
    """Per-seed final validation losses for both variants, with medians."""
    rows = ab_result.rows
    summary = ab_result.summary
    va, vb = summary["variant_a"], summary["variant_b"]
    seeds = sorted({r["seed"] for r in rows})

    def series(variant):
        by_seed = {r["seed"]: r["val_loss"] for r in rows if r["variant"] == variant}
        return [by_seed[s] for s in seeds]

    fig, (ax, axm) = plt.subplots(1, 2, figsize=(9, 4.5))
    x = range(len(seeds))
    width = 0.38
    ax.bar([i - width / 2 for i in x], series(va), width, label=va, color="tab:gray")
    ax.bar([i + width / 2 for i in x], series(vb), width, label=vb, color="tab:blue")
    ax.axhline(summary["median_val_loss_a"], color="tab:gray", linestyle=":")
    ax.axhline(summary["median_val_loss_b"], color="tab:blue", linestyle=":")
    ax.set_xticks(list(x), [str(s) for s in seeds])
    ax.set_xlabel("seed")
    ax.set_ylabel("final val loss")
    ax.legend()
    ax.set_title("validation loss by seed")

    def metric_series(variant):
        by_seed = {r["seed"]: r["metric"] for r in rows if r["variant"] == variant}
        return [by_seed[s] for s in seeds]

    axm.plot(list(x), metric_series(va), "o-", label=va, color="tab:gray")
    axm.plot(list(x), metric_series(vb), "o-", label=vb, color="tab:blue")
    axm.set_xticks(list(x), [str(s) for s in seeds])
    axm.set_xlabel("seed")
    axm.set_ylabel("final metric")
    axm.set_ylim(0.0, 1.05)
    axm.legend()
    axm.set_title("task metric by seed")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_scaling_curves(series: dict[str, tuple[list[float], list[float]]], path) -> None:
    """Log-log FLOPs-versus-pixel-count curves, one line per label."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for label, (xs, ys) in sorted(series.items()):
        ax.loglog(xs, ys, "o-", label=label)
    ax.set_xlabel("pixel count (H*W)")
    ax.set_ylabel("FLOPs")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    ax.set_title("cost scaling")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
