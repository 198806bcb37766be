"""Report figures rendered straight to PNG files.

Everything draws from finished ExperimentResult objects; nothing here
re-runs training. The Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvaluationReport


def _slug(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", label.lower()).strip("-")


def confusion_heatmap(report: EvaluationReport, path, title: str) -> Path:
    """Row-normalized confusion heatmap with raw counts annotated."""
    counts = report.confusion.counts
    names = report.confusion.class_names
    rows = counts.sum(axis=1, keepdims=True)
    shares = np.divide(counts, rows, out=np.zeros(counts.shape), where=rows > 0)
    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2.2, 1.0 * len(names) + 1.8))
    image = ax.imshow(shares, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    for i in range(len(names)):
        for j in range(len(names)):
            color = "white" if shares[i, j] > 0.5 else "black"
            ax.text(j, i, str(int(counts[i, j])), ha="center", va="center", color=color)
    fig.colorbar(image, ax=ax, label="row share")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def metric_bars(results, path) -> Path:
    """Grouped bars: SLA and macro-F1 per method."""
    labels = [r.label for r in results]
    sla = [r.aggregate.sla for r in results]
    f1 = [r.aggregate.macro_f1 for r in results]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(6.0, 1.4 * len(labels)), 4.2))
    ax.bar(x - 0.2, sla, width=0.4, label="SLA")
    ax.bar(x + 0.2, f1, width=0.4, label="macro F1")
    ax.set_xticks(x, labels, rotation=20, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("Method comparison (pooled over seeds and folds)")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def per_class_bars(results, path) -> Path:
    """Per-class sequence accuracy, one bar group per class."""
    names = results[0].aggregate.confusion.class_names
    x = np.arange(len(names))
    n = len(results)
    width = 0.8 / n
    fig, ax = plt.subplots(figsize=(max(6.0, 1.6 * len(names)), 4.2))
    for i, result in enumerate(results):
        values = [
            result.aggregate.per_class_accuracy[name] or 0.0 for name in names
        ]
        ax.bar(x + (i - (n - 1) / 2) * width, values, width=width, label=result.label)
    ax.set_xticks(x, names)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("per-class sequence accuracy")
    ax.set_title("Per-class accuracy by method")
    ax.legend(fontsize="small")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def loss_curves(results, path) -> Path:
    """Training loss per epoch for the first seed of each result.

    Stage curves are drawn back to back (pretrain, auxiliary, then the
    fold-0 target stage) so the whole chain of one replication is visible.
    """
    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    styles = {"pretrain": ":", "auxiliary": "--", "target": "-"}
    for idx, result in enumerate(results):
        events = results[idx].seed_results[0].events
        color = f"C{idx}"
        offset = 0
        labeled = False
        for event in events:
            if event["event"] != "train":
                continue
            if event["stage"] == "target" and event.get("fold") not in (0, None):
                continue  # one representative fold is enough
            history = event["loss_history"]
            xs = np.arange(offset, offset + len(history))
            ax.plot(
                xs,
                history,
                styles[event["stage"]],
                color=color,
                label=result.label if not labeled else None,
            )
            labeled = True
            offset += len(history)
    ax.set_xlabel("epoch (stages back to back)")
    ax.set_ylabel("mean training loss")
    ax.set_title("Training loss, first replication")
    ax.grid(alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_figures(results, out_dir) -> dict[str, Path]:
    """All report figures for a result collection; returns name -> path."""
    results = list(results)
    if not results:
        raise ValueError("render_figures: no results")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {
        "method_comparison": metric_bars(results, out / "method_comparison.png"),
        "per_class_accuracy": per_class_bars(results, out / "per_class_accuracy.png"),
        "loss_curves": loss_curves(results, out / "loss_curves.png"),
    }
    for result in results:
        name = f"confusion_{_slug(result.label)}"
        written[name] = confusion_heatmap(
            result.aggregate, out / f"{name}.png", result.label
        )
    return written
