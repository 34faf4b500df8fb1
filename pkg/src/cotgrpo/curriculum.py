"""Pass-rate difficulty estimates, zero-pass filtering and training plans."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .grammar import Regime, parse
from . import policy as pol
from .policy import DEFAULT_MAX_LEN, PolicyParams
from .reward import answer_reward
from .rng import stream
from .synth import Question

DEFAULT_ATTEMPTS = 16
CURRICULUM = "curriculum"
SHUFFLED = "shuffled"


@dataclass(frozen=True)
class PassRate:
    question_id: int
    attempts: int
    successes: int

    def __post_init__(self) -> None:
        if not 0 <= self.successes <= self.attempts:
            raise ValueError(f"successes {self.successes} outside 0..{self.attempts}")

    @property
    def rate(self) -> float:
        return self.successes / self.attempts


@dataclass(frozen=True)
class CurriculumPlan:
    ids: tuple[int, ...]
    ordering_kind: str
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.ids)


def estimate_pass_rates(params: PolicyParams, questions: Sequence[Question],
                        attempts: int = DEFAULT_ATTEMPTS, temperature: float = 1.0,
                        seed: int = 0, max_len: int = DEFAULT_MAX_LEN,
                        prompt: Regime = Regime.DIRECT, workers: int = 1) -> list[PassRate]:
    """Success counts over ``attempts`` independent samples per question.

    Attempt ``k`` of question ``q`` uses the stream (seed, "pass-rate", q, k).
    """
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    traces = pol.rollout(params, questions, prompt, attempts, temperature, max_len, seed,
                     "pass-rate", 0, workers)
    out = []
    for q, group in zip(questions, traces):
        wins = sum(answer_reward(parse(t.tokens), q.correct_index) for t in group)
        out.append(PassRate(q.id, attempts, wins))
    return out


def estimate_pass_rate(params: PolicyParams, question: Question,
                       attempts: int = DEFAULT_ATTEMPTS, temperature: float = 1.0,
                       seed: int = 0, max_len: int = DEFAULT_MAX_LEN) -> PassRate:
    return estimate_pass_rates(params, [question], attempts, temperature, seed, max_len)[0]


def _rate_map(rates: Mapping[int, float] | Sequence[PassRate]) -> dict[int, float]:
    if isinstance(rates, Mapping):
        return dict(rates)
    return {r.question_id: r.rate for r in rates}


def filter_zero_pass(dataset: Sequence[Question],
                     rates: Mapping[int, float] | Sequence[PassRate]) -> list[Question]:
    """Drop exactly the questions whose pass rate is 0; order is preserved."""
    rate = _rate_map(rates)
    missing = [q.id for q in dataset if q.id not in rate]
    if missing:
        raise KeyError(f"no pass rate for question ids {missing[:5]}")
    return [q for q in dataset if rate[q.id] > 0]


def order_by_difficulty(dataset: Sequence[Question],
                        rates: Mapping[int, float] | Sequence[PassRate]) -> CurriculumPlan:
    """Highest pass rate first; ties by ascending id."""
    rate = _rate_map(rates)
    ids = sorted((q.id for q in dataset), key=lambda i: (-rate[i], i))
    return CurriculumPlan(tuple(ids), CURRICULUM)


def shuffled_plan(dataset: Sequence[Question], seed: int) -> CurriculumPlan:
    if not dataset:
        raise ValueError("cannot plan an empty dataset")
    ids = np.array([q.id for q in dataset])
    perm = stream(seed, "shuffled-plan").permutation(len(ids))
    return CurriculumPlan(tuple(int(i) for i in ids[perm]), SHUFFLED, seed)


def save_plan(plan: CurriculumPlan, path: str | Path) -> None:
    header = f"# ordering_kind={plan.ordering_kind} seed={'' if plan.seed is None else plan.seed}"
    Path(path).write_text("\n".join([header, *map(str, plan.ids)]) + "\n", encoding="utf-8")


def load_plan(path: str | Path) -> CurriculumPlan:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing plan header")
    fields = dict(tok.split("=", 1) for tok in lines[0][1:].split())
    kind = fields.get("ordering_kind")
    if kind not in (CURRICULUM, SHUFFLED):
        raise ValueError(f"{path}: unknown ordering_kind {kind!r}")
    seed = fields.get("seed") or None
    ids = tuple(int(line) for line in lines[1:] if line.strip())
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate ids in plan")
    return CurriculumPlan(ids, kind, None if seed is None else int(seed))
