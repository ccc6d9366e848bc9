"""Report figures written next to the CSV/TSV outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .store import atomic_path  # noqa: E402

PARADIGM_COLORS = {"SPK": "#4c72b0", "DL": "#dd8452", "Hybrid": "#55a868"}

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "akgfuse",
}


def _save(fig, path) -> None:
    # no Software/date metadata so repeated runs give identical files
    with atomic_path(path) as tmp:
        fig.savefig(tmp, format="png", dpi=120, bbox_inches="tight",
                    metadata={"Software": None})
    plt.close(fig)


def ablation_figure(rows, path, title: str = "Macro F1 by input embedding") -> None:
    """Horizontal bars, one per grid row, with per-seed spread when available."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.0, 0.45 * len(rows) + 1.0))
        names = [r["input"] for r in rows][::-1]
        vals = [r["macro_f1"] for r in rows][::-1]
        colors = [PARADIGM_COLORS.get(r["paradigm"], "grey") for r in rows][::-1]
        y = np.arange(len(rows))
        ax.barh(y, vals, color=colors)
        lo = [r.get("macro_f1_min") for r in rows][::-1]
        hi = [r.get("macro_f1_max") for r in rows][::-1]
        if all(v is not None for v in lo + hi):
            err = np.array([np.subtract(vals, lo), np.subtract(hi, vals)])
            ax.errorbar(vals, y, xerr=err, fmt="none", ecolor="black", capsize=2, lw=0.8)
        for yi, v in zip(y, vals):
            ax.text(v + 0.01, yi, f"{v:.2f}", va="center", fontsize=7)
        ax.set_yticks(y)
        ax.set_yticklabels(names)
        ax.set_xlim(0, 1.05)
        ax.set_xlabel("Macro F1 (test split)")
        ax.set_title(title)
        handles = [plt.Rectangle((0, 0), 1, 1, color=c) for c in PARADIGM_COLORS.values()]
        ax.legend(handles, PARADIGM_COLORS.keys(), loc="lower right", frameon=False)
        _save(fig, path)


def loss_curve_figure(values, path, ylabel: str = "mean margin loss",
                      title: str = "TransE training") -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(np.arange(1, len(values) + 1), values, lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        _save(fig, path)


def history_figure(history, path) -> None:
    """Train loss and validation Macro F1 per epoch on twin axes."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ep = [h["epoch"] for h in history]
        ax.plot(ep, [h["train_loss"] for h in history], color="#4c72b0", lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("train cross-entropy", color="#4c72b0")
        ax2 = ax.twinx()
        ax2.plot(ep, [h["val_macro_f1"] for h in history], color="#55a868", lw=1.2)
        ax2.set_ylabel("val Macro F1", color="#55a868")
        ax2.set_ylim(0, 1)
        _save(fig, path)


def confusion_figure(golds: dict, preds: dict, classes, path) -> None:
    k = len(classes)
    idx = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((k, k), dtype=int)
    for i, g in golds.items():
        cm[idx[g], idx[preds[i]]] += 1
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.8))
        ax.imshow(cm, cmap="Blues")
        for a in range(k):
            for b in range(k):
                ax.text(b, a, str(cm[a, b]), ha="center", va="center", fontsize=7,
                        color="white" if cm[a, b] > cm.max() / 2 else "black")
        ax.set_xticks(range(k))
        ax.set_xticklabels(classes, rotation=45, ha="right")
        ax.set_yticks(range(k))
        ax.set_yticklabels(classes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("gold")
        _save(fig, path)
