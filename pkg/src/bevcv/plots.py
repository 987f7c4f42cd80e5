"""Matplotlib figures written next to the CSV reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata so identical data gives identical PNG bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def figure_path(csv_path, suffix=".png"):
    return Path(csv_path).with_suffix(suffix)


def plot_recall(report, path, title="Recall@K"):
    labels = [f"R@{k}" for k in sorted(report.recall)] + [f"R@{report.top_pct:g}%"]
    values = [report.recall[k] for k in sorted(report.recall)] + [report.recall_top_pct]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bars = ax.bar(labels, values, color="#4477aa")
    for b, v in zip(bars, values):
        ax.text(b.get_x() + b.get_width() / 2, v + 1, f"{v:.1f}", ha="center", fontsize=8)
    ax.set_ylim(0, 105)
    ax.set_ylabel("recall (%)")
    ax.set_title(f"{title} ({report.n_queries} queries, gallery {report.index_size})")
    return _save(fig, path)


def plot_offset_sweep(rows, path, title="Recall vs yaw offset"):
    offsets = [o for o, _ in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    first = rows[0][1]
    for k in sorted(first.recall):
        ax.plot(offsets, [r.recall[k] for _, r in rows], marker="o", label=f"R@{k}")
    ax.plot(offsets, [r.recall_top_pct for _, r in rows], marker="s", linestyle="--",
            label=f"R@{first.top_pct:g}%")
    ax.set_xlabel("yaw offset (deg, random sign per query)")
    ax.set_ylabel("recall (%)")
    ax.set_ylim(0, 105)
    ax.set_xticks(offsets)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title(title)
    return _save(fig, path)


def plot_loss_trace(losses, lrs, path, title="Head training"):
    epochs = np.arange(1, len(losses) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, color="#aa3377", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax2 = ax.twinx()
    ax2.step(epochs, lrs, where="post", color="#228833", alpha=0.6, label="lr")
    ax2.set_yscale("log")
    ax2.set_ylabel("learning rate")
    ax.set_title(title)
    return _save(fig, path)


def plot_benchmark(timings, path, title="Query latency"):
    fig, ax = plt.subplots(figsize=(6, 4))
    series = {}
    for t in timings:
        series.setdefault((t.method, t.dim), []).append((t.size, t.median_s * 1e3))
    for (method, dim), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                linestyle="-" if method == "kdtree" else "--", label=f"{method} D={dim}")
    ax.set_xlabel("index size")
    ax.set_ylabel("median latency (ms)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    ax.set_title(title)
    return _save(fig, path)


def plot_bev(bev, path, title="BEV feature energy"):
    """Per-cell L2 energy of a (C, Z, X) BEV map; nearest row at the bottom."""
    energy = np.sqrt((np.asarray(bev, np.float64) ** 2).sum(axis=0))
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(energy, origin="lower", cmap="magma")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_xlabel("x cell")
    ax.set_ylabel("z cell")
    ax.set_title(title)
    return _save(fig, path)
