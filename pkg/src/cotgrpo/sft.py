"""Supervised warm start on verified synthetic teacher traces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import policy as pol
from .grammar import SECTIONS, Regime, parse, render, skeleton
from .policy import PolicyParams
from .reward import answer_reward, format_reward
from .rng import stream
from .synth import Question

MAX_TEACHER_ATTEMPTS = 100


@dataclass(frozen=True)
class SftConfig:
    epochs: int = 3
    batch_size: int = 64
    learning_rate: float = 1e-1
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass(frozen=True)
class LengthParams:
    """Geometric CONTENT run lengths on {0, 1, ...}; p is the stop probability.

    Draws above the caps, or traces longer than ``max_len`` tokens, are redrawn.
    """
    structured_p: float = 0.2
    unstructured_p: float = 1.0 / 9.0
    section_cap: int = 12
    body_cap: int = 16
    max_len: int = pol.DEFAULT_MAX_LEN


@dataclass(frozen=True)
class TeacherTrace:
    question_id: int
    regime: Regime
    tokens: tuple[int, ...]
    verified: bool

    @property
    def text(self) -> str:
        return render(self.tokens)


class TeacherError(RuntimeError):
    pass


def _draw_lengths(regime: Regime, lp: LengthParams, rng: np.random.Generator) -> list[int]:
    if regime is Regime.STRUCTURED:
        return [int(v) for v in rng.geometric(lp.structured_p, size=len(SECTIONS)) - 1]
    return [int(rng.geometric(lp.unstructured_p)) - 1]


def teacher_trace(question: Question, regime: Regime, length_params: LengthParams = LengthParams(),
                  rng: np.random.Generator | None = None) -> TeacherTrace:
    """Format-perfect trace ending in the question's correct option.

    Lengths are redrawn while they exceed the caps (at most 100 draws).  The
    result is checked against the grammar and the answer before returning.
    """
    if rng is None:
        rng = stream(0, "teacher", question.id)
    lp = length_params
    cap = lp.section_cap if regime is Regime.STRUCTURED else lp.body_cap
    for _ in range(MAX_TEACHER_ATTEMPTS):
        lengths = [] if regime is Regime.DIRECT else _draw_lengths(regime, lp, rng)
        if any(n > cap for n in lengths):
            continue
        tokens = skeleton(regime, question.correct_index, lengths)
        if len(tokens) > lp.max_len:
            continue
        result = parse(tokens)
        if not (format_reward(result, regime) and answer_reward(result, question.correct_index)):
            raise TeacherError(f"teacher emitted an unverifiable trace for question {question.id}")
        return TeacherTrace(question.id, regime, tuple(int(t) for t in tokens), True)
    raise TeacherError(f"no teacher trace within length caps after {MAX_TEACHER_ATTEMPTS} draws; "
                       "check length parameters")


def teacher_set(questions: Sequence[Question], regime: Regime,
                length_params: LengthParams = LengthParams(), seed: int = 0) -> list[TeacherTrace]:
    return [teacher_trace(q, regime, length_params, stream(seed, "teacher", q.id))
            for q in questions]


def sft_loss(params: PolicyParams, teacher: TeacherTrace,
             question: Question) -> tuple[float, PolicyParams]:
    """Negative log-likelihood of the teacher tokens and its gradient."""
    grad = params.zeros_like()
    lp = pol.accumulate_grad(grad, params, teacher.tokens, teacher.regime, question.features, -1.0)
    return -float(np.sum(lp)), grad


def sft_train(params: PolicyParams, teachers: Sequence[TeacherTrace],
              questions: Mapping[int, Question], config: SftConfig = SftConfig()
              ) -> tuple[PolicyParams, list[float]]:
    """Mini-batch gradient descent on mean NLL; returns per-epoch mean loss."""
    if not teachers:
        raise ValueError("empty teacher set")
    bad = [t.question_id for t in teachers if not t.verified]
    if bad:
        raise ValueError(f"unverified teacher traces for questions {bad[:5]}")
    params = params.copy()
    history = []
    n = len(teachers)
    opt = Adam(params, config) if config.optimizer == "adam" else None
    for epoch in range(config.epochs):
        order = stream(config.seed, "sft-shuffle", epoch).permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            grad = params.zeros_like()
            for i in idx:
                t = teachers[i]
                lp = pol.accumulate_grad(grad, params, t.tokens, t.regime,
                                         questions[t.question_id].features, -1.0)
                total -= float(np.sum(lp))
            grad = grad.scaled(1.0 / len(idx))
            if opt is None:
                params.iadd_scaled(-config.learning_rate, grad)
            else:
                opt.step(params, grad)
        history.append(total / n)
    return params, history


class Adam:
    """Bias-corrected Adam moments over the flat parameter vector."""

    def __init__(self, params: PolicyParams, config: SftConfig) -> None:
        self.config = config
        self.m = np.zeros_like(params.flat())
        self.v = np.zeros_like(self.m)
        self.t = 0

    def step(self, params: PolicyParams, grad: PolicyParams) -> None:
        c = self.config
        g = grad.flat()
        self.t += 1
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * g
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * g * g
        m_hat = self.m / (1.0 - c.beta1 ** self.t)
        v_hat = self.v / (1.0 - c.beta2 ** self.t)
        update = params.with_flat(c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps))
        params.iadd_scaled(-1.0, update)


def n_steps(n_traces: int, config: SftConfig) -> int:
    return math.ceil(n_traces / config.batch_size) * config.epochs
