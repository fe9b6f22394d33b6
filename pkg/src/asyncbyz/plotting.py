"""Matplotlib figures for the CLI report and sweep commands."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "svg.hashsalt": "asyncbyz",  # stable element ids, so identical data gives identical files
}


def plot_curves(curves, path, ylabel="excess loss"):
    """Mean curves with a one-stderr band on log-log axes.

    ``curves`` maps a label to ``(t, mean, stderr)`` arrays.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, (t, mean, err) in curves.items():
            t, mean, err = map(np.asarray, (t, mean, err))
            line, = ax.plot(t, mean, lw=1.2, label=label)
            err = np.nan_to_num(err)
            lo = np.clip(mean - err, np.finfo(float).tiny, None)
            ax.fill_between(t, lo, mean + err, color=line.get_color(), alpha=0.2, lw=0)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("iteration t")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)


def plot_sweep(axis, values, means, errs, path):
    """Final excess loss against the swept parameter, with stderr bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [str(v) for v in values]
        pos = np.arange(len(values))
        ax.errorbar(pos, means, yerr=np.nan_to_num(errs), fmt="o-", capsize=3, lw=1.2)
        ax.set_xticks(pos, labels)
        ax.set_yscale("log")
        ax.set_xlabel(axis)
        ax.set_ylabel("final excess loss")
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
