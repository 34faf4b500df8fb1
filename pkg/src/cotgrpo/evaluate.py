"""Multi-trial accuracy evaluation with a per-category breakdown."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import policy as pol
from .grammar import Regime, parse
from .policy import PolicyParams
from .reward import answer_reward, format_reward
from .synth import CATEGORIES, Question

DEFAULT_TRIALS = 4
CSV_FIELDS = ("model_tag", "category", "accuracy", "format_rate",
              "mean_completion_length", "k", "n")


@dataclass
class CategoryStats:
    n: int
    accuracy: float | None
    format_rate: float | None
    mean_completion_length: float | None


@dataclass
class EvalReport:
    categories: dict[str, CategoryStats]
    average: float
    macro_average: float
    k: int
    n_questions: int
    mean_completion_length: float
    format_rate: float

    def accuracy(self, category: str) -> float | None:
        return self.categories[category].accuracy


def evaluate(params: PolicyParams, questions: Sequence[Question], regime: Regime,
             k: int = DEFAULT_TRIALS, temperature: float = 1.0, seed: int = 0,
             greedy: bool = False, max_len: int = pol.DEFAULT_MAX_LEN,
             workers: int = 1) -> EvalReport:
    """k sampled answers per question, scored by exact option match.

    ``average`` is the mean over all k * n trials; ``macro_average`` the mean
    of the non-empty per-category accuracies.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not questions:
        raise ValueError("cannot evaluate an empty question set")
    if greedy:
        traces = [[pol.greedy_decode(params, q, regime, max_len)] * k for q in questions]
    else:
        traces = pol.rollout(params, questions, regime, k, temperature, max_len, seed, "eval",
                         0, workers)
    correct = np.zeros((len(questions), k))
    valid = np.zeros_like(correct)
    length = np.zeros_like(correct)
    for i, (q, group) in enumerate(zip(questions, traces)):
        for j, t in enumerate(group):
            res = parse(t.tokens)
            correct[i, j] = answer_reward(res, q.correct_index)
            valid[i, j] = format_reward(res, regime)
            length[i, j] = res.completion_length

    cats = np.array([q.category for q in questions])
    stats = {}
    for name in _category_names(questions):
        mask = cats == name
        if not mask.any():
            stats[name] = CategoryStats(0, None, None, None)
            continue
        stats[name] = CategoryStats(int(mask.sum()), float(correct[mask].mean()),
                                    float(valid[mask].mean()), float(length[mask].mean()))
    present = [s.accuracy for s in stats.values() if s.accuracy is not None]
    return EvalReport(
        categories=stats,
        average=float(correct.mean()),
        macro_average=float(np.mean(present)),
        k=k,
        n_questions=len(questions),
        mean_completion_length=float(length.mean()),
        format_rate=float(valid.mean()),
    )


def _category_names(questions: Sequence[Question]) -> list[str]:
    names = list(CATEGORIES)
    names += sorted({q.category for q in questions} - set(names))
    return names


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def report_rows(tag: str, report: EvalReport) -> list[list[str]]:
    rows = []
    for name, s in report.categories.items():
        rows.append([tag, name, _fmt(s.accuracy), _fmt(s.format_rate),
                     _fmt(s.mean_completion_length), str(report.k), str(s.n)])
    rows.append([tag, "average", _fmt(report.average), _fmt(report.format_rate),
                 _fmt(report.mean_completion_length), str(report.k), str(report.n_questions)])
    rows.append([tag, "macro_average", _fmt(report.macro_average), "", "", str(report.k),
                 str(report.n_questions)])
    return rows


def report_csv(reports: Mapping[str, EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for tag, report in reports.items():
        w.writerows(report_rows(tag, report))
    return buf.getvalue()


def report_table(reports: Mapping[str, EvalReport] | EvalReport, tag: str = "model") -> str:
    """Fixed-width table: one row per model tag, categories as columns."""
    if isinstance(reports, EvalReport):
        reports = {tag: reports}
    cats: list[str] = []
    for r in reports.values():
        cats += [c for c in r.categories if c not in cats]
    header = ["Model", *(c.capitalize() for c in cats), "Average", "Macro"]
    body = []
    for name, r in reports.items():
        cells = [name]
        for c in cats:
            s = r.categories.get(c)
            cells.append(_fmt(None if s is None else s.accuracy))
        body.append(cells + [_fmt(r.average), _fmt(r.macro_average)])
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]

    def line(cells: list[str]) -> str:
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                         for i, (c, w) in enumerate(zip(cells, widths)))

    out = [line(header), "  ".join("-" * w for w in widths), *map(line, body)]
    return "\n".join(out) + "\n"
