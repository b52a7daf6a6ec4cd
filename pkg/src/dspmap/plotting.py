"""Figures written next to the metric tables (Agg backend, PNG)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PHASE_COLUMNS = ("preprocess", "predict", "update", "resample", "birth")


def pr_figure(curves: dict, path: str | Path, title: str = "") -> None:
    """Precision over recall, one line per label; ``curves`` maps label -> PrCurve."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for label, c in curves.items():
        pts = sorted(c.points, key=lambda p: p.recall)
        ax.plot([p.recall for p in pts], [p.precision for p in pts], marker=".",
                label=f"{label} (AUC {c.auc:.3f})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def timing_figure(rows: list[dict], path: str | Path) -> None:
    """Stacked per-phase time per frame."""
    fig, ax = plt.subplots(figsize=(6, 3))
    frames = [int(r["frame"]) for r in rows]
    bottom = [0.0] * len(rows)
    for phase in PHASE_COLUMNS:
        vals = [float(r[f"t_{phase}_ms"]) for r in rows]
        ax.bar(frames, vals, bottom=bottom, width=1.0, label=phase)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_xlabel("frame")
    ax.set_ylabel("time [ms]")
    ax.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def bench_figure(rows: list[dict], path: str | Path) -> None:
    """Mean phase times for each bench combination."""
    fig, ax = plt.subplots(figsize=(6, 3))
    labels = [r["combo"] for r in rows]
    x = range(len(rows))
    bottom = [0.0] * len(rows)
    for phase in PHASE_COLUMNS:
        vals = [float(r[f"mean_t_{phase}_ms"]) for r in rows]
        ax.bar(x, vals, bottom=bottom, label=phase)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=20, fontsize=7)
    ax.set_ylabel("mean time [ms]")
    ax.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
