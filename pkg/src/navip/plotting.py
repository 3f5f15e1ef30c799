"""Static figures written next to the report tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # fixed metadata keeps reruns byte-identical
    "svg.hashsalt": "navip",
}


def _ks(rows, metric):
    ks = set()
    for r in rows:
        ks |= {int(c.split("@")[1]) for c in r.means if c.startswith(metric + "@")}
    return sorted(ks)


def plot_comparison(rows, path, segments=("",)) -> Path:
    """Grouped bars of HR@k and NDCG@k per method, with std error bars.

    ``segments`` adds one row of panels per item segment, e.g.
    ``("", "_head", "_tail")``.
    """
    path = Path(path)
    segs = [s for s in segments if _ks(rows, "hr" + s)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(segs), 2, figsize=(7.0, 2.6 * len(segs)), squeeze=False)
        width = 0.8 / max(len(rows), 1)
        for si, seg in enumerate(segs):
            for mi, metric in enumerate(("hr", "ndcg")):
                ax = axes[si, mi]
                ks = _ks(rows, metric + seg)
                x = np.arange(len(ks))
                for ri, r in enumerate(rows):
                    cols = [f"{metric}{seg}@{k}" for k in ks]
                    means = [r.means.get(c) or 0.0 for c in cols]
                    errs = [r.stds.get(c) or 0.0 for c in cols]
                    ax.bar(x + (ri - (len(rows) - 1) / 2) * width, means, width, yerr=errs,
                           capsize=2, label=r.label)
                ax.set_xticks(x)
                ax.set_xticklabels([f"@{k}" for k in ks])
                name = metric.upper() + ({"_head": " (head)", "_tail": " (tail)"}.get(seg, ""))
                ax.set_title(name)
                ax.set_ylim(0, 1)
        axes[0, 0].legend(loc="upper left", frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path


def plot_loss_trace(trace, path) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        ax.plot(np.arange(1, len(trace) + 1), trace, lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean training loss")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path
