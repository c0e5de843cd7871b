"""Figure rendering for the CLI report paths. Files only, no display.

Each function takes already-computed results and a target path, draws one
matplotlib figure, and writes it. The Agg backend is forced so rendering
works in headless environments.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_history(history, path) -> str:
    """Training curve: objective and squared errors against the epoch."""
    epochs = [row.epoch for row in history]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(epochs, [row.train_objective for row in history],
            label="train objective", color="tab:blue")
    ax.plot(epochs, [row.train_mse for row in history], label="train mse",
            color="tab:blue", linestyle="--", alpha=0.7)
    vals = [(row.epoch, row.val_mse) for row in history
            if row.val_mse is not None]
    if vals:
        ax.plot([e for e, _ in vals], [v for _, v in vals], label="val mse",
                color="tab:orange")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    return _finish(fig, path)


def render_bounds(report, path) -> str:
    """Rate-bound check: objective gap and its bound on a log scale."""
    ks = [row[0] for row in report.rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.semilogy(ks, [max(row[1], 1e-300) for row in report.rows],
                label="objective gap")
    ax.semilogy(ks, [max(row[2], 1e-300) for row in report.rows],
                label=f"{report.method} bound", linestyle="--")
    ax.set_xlabel("iteration")
    ax.set_ylabel("gap")
    ax.legend()
    return _finish(fig, path)


def render_attention(matrix, node_ids, path) -> str:
    """Heatmap of one influence matrix; rows are sources."""
    matrix = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(5.0, 4.4))
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0)
    ax.set_xticks(range(len(node_ids)), labels=node_ids, rotation=90)
    ax.set_yticks(range(len(node_ids)), labels=node_ids)
    ax.set_xlabel("target")
    ax.set_ylabel("source")
    fig.colorbar(im, ax=ax, shrink=0.85)
    return _finish(fig, path)


def render_parity(truth, preds, path) -> str:
    """Predicted against actual values, with the identity for reference."""
    truth = np.asarray(truth).reshape(-1)
    preds = np.asarray(preds).reshape(-1)
    fig, ax = plt.subplots(figsize=(4.8, 4.4))
    ax.scatter(truth, preds, s=8, alpha=0.5, edgecolors="none")
    lo = min(truth.min(), preds.min())
    hi = max(truth.max(), preds.max())
    ax.plot([lo, hi], [lo, hi], color="black", linewidth=0.8)
    ax.set_xlabel("actual")
    ax.set_ylabel("predicted")
    return _finish(fig, path)


def render_forecast(context, forecast, node_ids, path) -> str:
    """Recent actual values per node with the forecast appended."""
    context = np.asarray(context)
    forecast = np.asarray(forecast)
    t0 = context.shape[0]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for i, node in enumerate(node_ids):
        line, = ax.plot(range(t0), context[:, i], label=node, alpha=0.8)
        ax.plot(range(t0 - 1, t0 + forecast.shape[0]),
                np.concatenate([[context[-1, i]], forecast[:, i]]),
                color=line.get_color(), linestyle="--")
    ax.axvline(t0 - 0.5, color="gray", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("value")
    if len(node_ids) <= 12:
        ax.legend(fontsize=8, ncol=2)
    return _finish(fig, path)
