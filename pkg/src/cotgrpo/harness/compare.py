"""Align GRPO metric series across run directories and summarise them."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..grpo import METRIC_FIELDS
from .pipeline import read_eval_average
from . import figures


@dataclass
class RunSummary:
    label: str
    variant: str
    seed: int | None
    final: float
    maximum: float
    steps_to_threshold: int
    final_accuracy: float | None


@dataclass
class Comparison:
    metric: str
    threshold: float
    series: dict[str, list[float]]
    differences: dict[str, list[float]]
    runs: list[RunSummary]
    medians: dict[str, dict[str, float]]

    def series_csv(self) -> str:
        labels = list(self.series)
        n = max(len(v) for v in self.series.values())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", *labels])
        for i in range(n):
            w.writerow([i, *(repr(v[i]) if i < len(v) else "" for v in self.series.values())])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "variant", "seed", "final", "max", "steps_to_threshold",
                    "final_accuracy"])
        for r in self.runs:
            w.writerow([r.label, r.variant, r.seed, repr(r.final), repr(r.maximum),
                        r.steps_to_threshold,
                        "" if r.final_accuracy is None else repr(r.final_accuracy)])
        return buf.getvalue()


def steps_to_threshold(values: Sequence[float], fraction: float = 0.9,
                       reference: str = "final") -> int:
    """First step whose value reaches ``fraction`` of the final (or max) value."""
    if not values:
        raise ValueError("empty series")
    ref = values[-1] if reference == "final" else max(values)
    target = fraction * ref
    return next(i for i, v in enumerate(values) if v >= target)


def _read_series(run_dir: Path, metric: str) -> list[float]:
    path = run_dir / "grpo_metrics.csv"
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_FIELDS:
            raise ValueError(f"{path}: incompatible metrics schema {reader.fieldnames}")
        if metric not in METRIC_FIELDS[1:]:
            raise ValueError(f"unknown metric {metric!r}; choose from {METRIC_FIELDS[1:]}")
        return [float(row[metric]) for row in reader]


def compare_runs(run_dirs: Sequence[str | Path], metric: str = "answer_rate",
                 fraction: float = 0.9, reference: str = "final") -> Comparison:
    if len(run_dirs) < 2:
        raise ValueError("need at least two run directories")
    series: dict[str, list[float]] = {}
    runs = []
    for d in map(Path, run_dirs):
        mpath = d / "manifest.json"
        # stand-alone grpo output has no manifest; fall back to the directory name
        manifest = (json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists()
                    else {"variant": d.name, "seed": None})
        label = str(d)
        values = _read_series(d, metric)
        series[label] = values
        acc = read_eval_average(d) if (d / "eval_report.csv").exists() else None
        runs.append(RunSummary(label, manifest["variant"], manifest["seed"], values[-1],
                               max(values), steps_to_threshold(values, fraction, reference),
                               acc))
    first = next(iter(series.values()))
    diffs = {k: [a - b for a, b in zip(v, first)] for k, v in series.items()}
    medians: dict[str, dict[str, float]] = {}
    for variant in dict.fromkeys(r.variant for r in runs):
        group = [r for r in runs if r.variant == variant]
        med = {"final": statistics.median(r.final for r in group),
               "steps_to_threshold": statistics.median(r.steps_to_threshold for r in group)}
        accs = [r.final_accuracy for r in group if r.final_accuracy is not None]
        if accs:
            med["final_accuracy"] = statistics.median(accs)
        medians[variant] = med
    return Comparison(metric, fraction, series, diffs, runs, medians)


def write_comparison(comp: Comparison, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{comp.metric}_series.csv").write_text(comp.series_csv(), encoding="utf-8")
    (out / f"{comp.metric}_summary.csv").write_text(comp.summary_csv(), encoding="utf-8")
    (out / f"{comp.metric}_medians.json").write_text(
        json.dumps(comp.medians, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    figures.comparison(comp.series, comp.metric, out / f"{comp.metric}.png")
    return out
