"""Figure rendering for evaluation artifacts.

Every function draws one figure and writes it to a file; nothing is shown
interactively (the Agg backend is forced on import).  Figures accompany
the CSV outputs of the command-line reports — the CSVs remain the
machine-readable record, the PNGs are for eyeballs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def plot_quality_curves(series: dict, path, ylabel: str = "min scaled Jacobian") -> None:
    """Minimum quality over snapshot index, one line per labelled operator.

    series maps a label to (snapshot_ids, values) pairs of equal length.
    """
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, (ks, vals) in series.items():
        style = "--" if "biharmonic" in label.lower() else "-"
        ax.plot(ks, vals, style, marker=".", label=label)
    ax.set_xlabel("snapshot")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_histogram_grid(hists: list, path, ncols: int = 2) -> None:
    """Grid of per-snapshot/per-operator quality histograms.

    hists is a list of dicts with keys "title", "edges" (length nbins+1)
    and "counts" (length nbins), drawn row-major into a grid ncols wide.
    """
    if not hists:
        raise ValueError("no histograms to draw")
    ncols = max(1, min(ncols, len(hists)))
    nrows = (len(hists) + ncols - 1) // ncols
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(4.0 * ncols, 2.6 * nrows), squeeze=False, sharex=True
    )
    for ax in axes.flat[len(hists):]:
        ax.set_axis_off()
    for h, ax in zip(hists, axes.flat):
        edges = np.asarray(h["edges"], dtype=np.float64)
        counts = np.asarray(h["counts"])
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="black",
               linewidth=0.4)
        ax.set_title(h["title"], fontsize=9)
        ax.grid(True, alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("scaled Jacobian")
    for row in axes:
        row[0].set_ylabel("cells")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_loss_history(history: list, path) -> None:
    """Training and validation loss over epochs (log scale), lr on a twin axis.

    history rows are (epoch, train_loss, val_loss, lr).
    """
    if not history:
        raise ValueError("empty history")
    ep = [r[0] for r in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(ep, [r[1] for r in history], label="train loss")
    ax.semilogy(ep, [r[2] for r in history], label="validation loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.4)
    ax2 = ax.twinx()
    ax2.semilogy(ep, [r[3] for r in history], color="gray", alpha=0.6, label="learning rate")
    ax2.set_ylabel("learning rate", color="gray")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_quantile_band(x, q10, q50, q90, path, xlabel: str, ylabel: str,
                       logy: bool = False, reference=None, reference_label: str = "") -> None:
    """Median line with a 10-90% band; optionally a dashed reference curve."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.fill_between(x, q10, q90, alpha=0.3, label="10-90% band")
    ax.plot(x, q50, label="median")
    if reference is not None:
        ax.plot(x, reference, "--", color="black", label=reference_label or "reference")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
