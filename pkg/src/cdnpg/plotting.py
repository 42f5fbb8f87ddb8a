"""Matplotlib figures written next to the JSON/JSONL outputs."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .inspector import GranularityReport  # noqa: E402

DPI = 150


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def granularity_heatmap(report: GranularityReport, path: str | os.PathLike) -> Path:
    """Layers as rows, tokens as columns, color = z."""
    z = np.asarray(report.per_layer_z, dtype=float)
    layers, n = z.shape
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * n + 1.5), 0.5 * layers + 1.2))
    im = ax.imshow(z, cmap="coolwarm", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(n))
    ax.set_xticklabels(report.tokens, rotation=45, ha="right")
    ax.set_yticks(range(layers))
    ax.set_yticklabels([f"layer {i + 1}" for i in range(layers)])
    for i in range(layers):
        for j in range(n):
            ax.text(j, i, f"{z[i, j]:.2f}", ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax, label="granularity z")
    title = "encoder granularity"
    if report.mask_mode:
        title += f" (mask {report.mask_mode})"
    ax.set_title(title)
    return _save(fig, path)


def loss_curve(history: Sequence[dict], path: str | os.PathLike) -> Path:
    steps = [r["step"] for r in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, [r["train_loss"] for r in history], label="train")
    val = [(r["step"], r["val_loss"]) for r in history if r.get("val_loss") is not None]
    if val:
        ax.plot(*zip(*val), "o-", label="validation")
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def bench_bars(report: dict, path: str | os.PathLike) -> Path:
    labels = ["forward", "forward+backward"]
    ga = [report["forward_ga_s"], report["step_ga_s"]]
    base = [report["forward_baseline_s"], report["step_baseline_s"]]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(x - 0.2, base, 0.4, label=report.get("baseline", "baseline"))
    ax.bar(x + 0.2, ga, 0.4, label="GA-attention")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylabel("seconds (median)")
    ax.set_title(f"step-time ratio {report['step_ratio']:.2f}")
    ax.legend()
    return _save(fig, path)


def metric_bars(report: dict, path: str | os.PathLike) -> Path:
    keys = ["ibleu", "bleu2", "bleu4", "rouge_l"]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    vals = [100.0 * report[k] for k in keys]
    ax.bar(keys, vals, color="tab:gray")
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.2f}", ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("score x 100")
    ax.set_title(f"{report['n_records']} records")
    return _save(fig, path)
