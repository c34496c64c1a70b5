"""CSV emission and matplotlib figure rendering for run artifacts."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def write_csv(path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        return [{k: float(v) for k, v in row.items()} for row in reader]


def save_search_figure(rows: list[dict], path, title: str = "") -> None:
    epochs = [r["epoch"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    axes[0].plot(epochs, [r["train_loss"] for r in rows], label="train")
    axes[0].plot(epochs, [r["val_loss"] for r in rows], label="val")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].legend()
    axes[1].plot(epochs, [r["mean_edge_entropy"] for r in rows], color="tab:green")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("mean edge entropy")
    axes[2].plot(epochs, [r["dropout_rate"] for r in rows], color="tab:red", label="dropout")
    axes[2].plot(epochs, [r["lr"] for r in rows], color="tab:purple", label="lr")
    axes[2].set_xlabel("epoch")
    axes[2].legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_eval_figure(rows: list[dict], path, title: str = "") -> None:
    epochs = [r["epoch"] for r in rows]
    fig, ax1 = plt.subplots(figsize=(5.5, 3.5))
    ax1.plot(epochs, [r["train_loss"] for r in rows], color="tab:blue", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [r["test_acc"] for r in rows], color="tab:orange", label="test acc")
    ax2.set_ylabel("test accuracy", color="tab:orange")
    ax2.set_ylim(0, 1)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_histogram_figure(hists: dict[str, dict[int, int]], path,
                          title: str = "connection levels") -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    width = 0.8 / max(len(hists), 1)
    levels = sorted({lvl for h in hists.values() for lvl in h})
    for i, (name, hist) in enumerate(sorted(hists.items())):
        xs = [lvl + i * width for lvl in levels]
        ax.bar(xs, [hist.get(lvl, 0) for lvl in levels], width=width, label=name)
    ax.set_xticks([lvl + width * (len(hists) - 1) / 2 for lvl in levels])
    ax.set_xticklabels([str(lvl) for lvl in levels])
    ax.set_xlabel("connection level")
    ax.set_ylabel("edges")
    ax.legend()
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
