"""Figures for score traces, ROC curves, training history and tuning results.

Everything renders off-screen with the Agg backend and returns the written path.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
COLORS = {"nsibf": "#1f77b4", "recon": "#2ca02c", "pred": "#d62728"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def _shade(ax, t, labels):
    lab = np.asarray(labels, dtype=bool)
    if not lab.any():
        return
    edges = np.flatnonzero(np.diff(np.concatenate([[0], lab.astype(int), [0]])))
    for a, b in zip(edges[::2], edges[1::2]):
        ax.axvspan(t[a], t[b - 1], color="0.85", lw=0, zorder=0)


def plot_trace(trace, path, threshold: float | None = None, channel: int = 0) -> Path:
    """Observed vs predicted measurement (when present) above the anomaly score."""
    with plt.rc_context(STYLE):
        has_mu = trace.mu is not None and trace.x is not None
        fig, axes = plt.subplots(2 if has_mu else 1, 1, sharex=True, figsize=(7.0, 4.2 if has_mu else 2.4), squeeze=False)
        axes = axes[:, 0]
        t = trace.t
        if has_mu:
            ax = axes[0]
            _shade(ax, t, trace.labels if trace.labels is not None else np.zeros(t.size))
            ax.plot(t, trace.x[:, channel], lw=0.7, color="0.3", label="observed")
            ax.plot(t, trace.mu[:, channel], lw=0.7, color=COLORS.get(trace.variant, "C0"), label="predicted")
            ax.set_ylabel(f"x[{channel}] (normalized)")
            ax.legend(loc="upper right", frameon=False)
        ax = axes[-1]
        if trace.labels is not None:
            _shade(ax, t, trace.labels)
        ax.plot(t, trace.score, lw=0.7, color=COLORS.get(trace.variant, "C0"))
        if threshold is not None:
            ax.axhline(threshold, color="k", ls="--", lw=0.7)
        ax.set_ylabel(f"{trace.variant} score")
        ax.set_xlabel("super-step")
        fig.tight_layout()
        return _save(fig, path)


def plot_roc(curves: dict, path) -> Path:
    """ROC curves keyed by label, each with ``fpr``, ``tpr`` and ``auc``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.4))
        for name, roc in curves.items():
            ax.plot(roc.fpr, roc.tpr, lw=1.0, color=COLORS.get(name), label=f"{name} (AUC {roc.auc:.3f})")
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.6, ls=":")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_history(history: dict, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        ep = np.arange(1, len(history["train_loss"]) + 1)
        ax.plot(ep, history["train_loss"], lw=1.0, label="train")
        ax.plot(ep, history["val_loss"], lw=1.0, label="validation")
        if history.get("best_epoch", -1) > 0:
            ax.axvline(history["best_epoch"], color="0.6", lw=0.6, ls="--")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_tuning(trials, path) -> Path:
    """Surrogate mean F1 against test F1 per trial (test F1 only when it was computed)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.4))
        ok = [t for t in trials if t.ok]
        xs = [t.mean_f1 for t in ok]
        if all(t.test_f1 is not None for t in ok) and ok:
            ax.scatter(xs, [t.test_f1 for t in ok], s=14)
            ax.set_ylabel("test F1")
        else:
            ax.scatter(xs, [t.val_loss for t in ok], s=14)
            ax.set_ylabel("validation loss")
        ax.set_xlabel("mean F1 on negative samples")
        fig.tight_layout()
        return _save(fig, path)
