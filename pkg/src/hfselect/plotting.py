"""Figures written next to the CSV reports (SVG by default)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "svg.hashsalt": "hfselect",
    "svg.fonttype": "path",
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fmt = path.suffix.lstrip(".") or "svg"
    fig.savefig(path, format=fmt, bbox_inches="tight",
                metadata={"Date": None} if fmt == "svg" else None)
    plt.close(fig)
    return path


def plot_equity(dates: Sequence, curves: Mapping[str, Sequence[float]], path: str | Path,
                title: str = "") -> Path:
    """Line chart of equity curves (strategy with and without fees, baseline)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(7, 3.5))
        for label, ys in curves.items():
            style = "--" if "baseline" in label.lower() else "-"
            ax.plot(list(dates), list(ys), style, lw=1.2, label=label)
        ax.axhline(1.0, color="0.6", lw=0.6)
        ax.set_ylabel("equity")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.autofmt_xdate()
        return _save(fig, path)


def plot_training_logs(logs: Mapping[str, Sequence], path: str | Path, title: str = "") -> Path:
    """Train and test accuracy per epoch for one or several runs, overlaid."""
    with plt.rc_context(RC):
        fig, (ax_tr, ax_te) = plt.subplots(1, 2, figsize=(8, 3.2), sharey=True)
        for name, rows in logs.items():
            epochs = [r.epoch for r in rows]
            ax_tr.plot(epochs, [r.train_accuracy for r in rows], lw=1.2, label=name)
            ax_te.plot(epochs, [r.test_accuracy for r in rows], lw=1.2, label=name)
        for ax, sub in ((ax_tr, "train"), (ax_te, "test")):
            ax.axhline(0.25, color="0.6", lw=0.6, ls=":")
            ax.set_xlabel("epoch")
            ax.set_title(f"{title} {sub}".strip())
        ax_tr.set_ylabel("accuracy")
        ax_te.legend(frameon=False)
        return _save(fig, path)
