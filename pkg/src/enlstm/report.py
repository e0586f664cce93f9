"""Figure rendering for the CLI report paths (written next to the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_training_curves(stage_metrics, path) -> None:
    """Per-stage data-mismatch, ensemble-spread and multiplier traces."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    for k, metrics in enumerate(stage_metrics):
        epochs = [m.epoch + 1 for m in metrics]
        axes[0].plot(epochs, [m.data_mismatch for m in metrics], marker="o",
                     label=f"stage {k + 1}")
        axes[1].semilogy(epochs, [max(m.spread, 1e-300) for m in metrics], marker="o")
        axes[2].semilogy(epochs, [m.lam for m in metrics], marker="o")
    axes[0].set_ylabel("data mismatch")
    axes[1].set_ylabel("ensemble spread")
    axes[2].set_ylabel("multiplier")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.grid(alpha=0.3)
    if len(stage_metrics) > 1:
        axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_mse_boxplot(rows, path) -> None:
    """Distribution of per-evaluation MSE for every target."""
    targets = []
    for row in rows:
        if row["target"] not in targets:
            targets.append(row["target"])
    groups = [
        [row["mse"] for row in rows if row["target"] == t] for t in targets
    ]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(targets) + 1.5), 3.5))
    ax.boxplot(groups, tick_labels=targets)
    ax.set_ylabel("MSE (normalized)")
    ax.grid(alpha=0.3, axis="y")
    plt.setp(ax.get_xticklabels(), rotation=45, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_prediction_grid(depth, preds, stds, names, path, truth=None) -> None:
    """Depth tracks of every predicted log with a +-2 std band."""
    n = len(names)
    cols = min(n, 4)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.0 * cols, 3.6 * rows),
                             squeeze=False, sharey=True)
    for k, name in enumerate(names):
        ax = axes[k // cols][k % cols]
        ax.plot(preds[:, k], depth, lw=1.0, label="predicted")
        ax.fill_betweenx(
            depth,
            preds[:, k] - 2 * stds[:, k],
            preds[:, k] + 2 * stds[:, k],
            alpha=0.25,
            lw=0,
        )
        if truth is not None:
            ax.plot(truth[:, k], depth, lw=0.8, color="0.4", label="measured")
        ax.set_title(name, fontsize=9)
        ax.grid(alpha=0.3)
    for k in range(n, rows * cols):
        axes[k // cols][k % cols].axis("off")
    axes[0][0].invert_yaxis()
    axes[0][0].set_ylabel("depth (m)")
    if truth is not None:
        axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
