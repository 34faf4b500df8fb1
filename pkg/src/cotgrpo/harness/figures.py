"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "grid.linewidth": 0.5,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
    "savefig.dpi": 120,
}
# Keeps PNG bytes independent of the matplotlib version string.
PNG_METADATA = {"Software": None}


def figsize(width: float = 6.0, height: float | None = None) -> tuple[float, float]:
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    return width, width * golden if height is None else height


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def training_curves(rows: Sequence[Mapping[str, float]], path: str | Path,
                    title: str = "") -> Path:
    """Answer/format rate and completion length against GRPO step."""
    steps = [r["step"] for r in rows]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=figsize(8.0, 3.0))
        ax1.plot(steps, [r["answer_rate"] for r in rows], label="answer rate")
        ax1.plot(steps, [r["format_rate"] for r in rows], label="format rate")
        ax1.set_xlabel("step")
        ax1.set_ylim(-0.02, 1.02)
        ax1.legend()
        ax2.plot(steps, [r["mean_completion_length"] for r in rows], color="C2")
        ax2.set_xlabel("step")
        ax2.set_ylabel("completion length (tokens)")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def comparison(series: Mapping[str, Sequence[float]], metric: str, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(6.0))
        for label, values in series.items():
            ax.plot(range(len(values)), values, label=label)
        ax.set_xlabel("step")
        ax.set_ylabel(metric)
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)
