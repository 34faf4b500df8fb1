"""Group-relative policy optimisation with a clipped surrogate.

No value network: each question's G completions are scored and their rewards
normalised within the group.  The update is plain gradient ascent on the
batch-mean surrogate.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import policy as pol
from .grammar import Regime, parse
from .policy import PolicyParams, Trace
from .reward import RewardWeights, score
from .synth import Question

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "mean_reward", "format_rate", "answer_rate",
                 "mean_completion_length", "loss")


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 4
    batch_size: int = 32
    learning_rate: float = 5e-2
    clip_eps: float = 0.2
    kl_coef: float = 0.0
    temperature: float = 1.0
    epochs: int = 1
    std_eps: float = 1e-8
    max_len: int = pol.DEFAULT_MAX_LEN
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")
        if self.kl_coef < 0:
            raise ValueError("kl_coef must be >= 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class Group:
    question_id: int
    completions: list[Trace]
    rewards: np.ndarray
    advantages: np.ndarray
    formats: np.ndarray = field(default_factory=lambda: np.zeros(0))
    answers: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class StepMetrics:
    step: int
    mean_reward: float
    format_rate: float
    answer_rate: float
    mean_completion_length: float
    loss: float

    def row(self) -> dict[str, object]:
        return asdict(self)


def compute_advantages(rewards: Sequence[float], std_eps: float = 1e-8) -> np.ndarray:
    """(r - mean) / population std; all zeros when std < ``std_eps``."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError(f"need at least 2 rewards per group, got {r.size}")
    mean = r.mean()
    std = math.sqrt(float(np.mean((r - mean) ** 2)))
    if std < std_eps:
        return np.zeros_like(r)
    return (r - mean) / std


def surrogate_loss(params: PolicyParams, old_params: PolicyParams, group: Group,
                   question: Question, config: GrpoConfig,
                   ref_params: PolicyParams | None = None) -> tuple[float, PolicyParams]:
    """Negative clipped surrogate of one group and its analytic gradient.

    loss = -(1/G) sum_i (1/|o_i|) sum_t min(rho A_i, clip(rho, 1-eps, 1+eps) A_i)
    with rho = pi(token) / pi_old(token).  The KL term is only built when
    ``kl_coef > 0`` and uses the k3 estimator against ``ref_params``.
    """
    if params.theta.shape != old_params.theta.shape or params.W.shape != old_params.W.shape:
        raise ValueError("params and old_params have different shapes")
    G = len(group.completions)
    if len(group.advantages) != G:
        raise ValueError("group advantages do not match completions")
    eps = config.clip_eps
    grad = params.zeros_like()
    loss = 0.0
    for trace, adv in zip(group.completions, group.advantages):
        L = len(trace.tokens)
        if L == 0:
            continue
        _, old_lp = pol.logprob(old_params, trace, question)
        _, new_lp = pol.logprob(params, trace, question)
        rho = np.exp(new_lp - old_lp)
        unclipped = rho * adv
        clipped = np.clip(rho, 1.0 - eps, 1.0 + eps) * adv
        use_unclipped = unclipped <= clipped
        obj = np.where(use_unclipped, unclipped, clipped)
        scale = 1.0 / (G * L)
        loss -= scale * float(np.sum(obj))
        # d(rho A)/dtheta = rho A dlogpi; the clipped branch is flat.
        coef = -scale * np.where(use_unclipped, unclipped, 0.0)
        if config.kl_coef > 0:
            if ref_params is None:
                raise ValueError("kl_coef > 0 requires ref_params")
            _, ref_lp = pol.logprob(ref_params, trace, question)
            delta = ref_lp - new_lp
            loss += scale * config.kl_coef * float(np.sum(np.exp(delta) - delta - 1.0))
            coef = coef + scale * config.kl_coef * (1.0 - np.exp(delta))
        pol.accumulate_grad(grad, params, trace.tokens, trace.regime_prompt,
                            question.features, coef)
    return loss, grad


def make_group(question: Question, traces: list[Trace], regime: Regime,
               weights: RewardWeights, std_eps: float) -> Group:
    parsed = [score(parse(t.tokens), question.correct_index, regime, weights) for t in traces]
    rewards = np.array([p.total for p in parsed])
    return Group(question.id, traces, rewards, compute_advantages(rewards, std_eps),
                 np.array([p.format for p in parsed], dtype=float),
                 np.array([p.answer for p in parsed], dtype=float))


def grpo_step(params: PolicyParams, questions: Sequence[Question], regime: Regime,
              config: GrpoConfig, weights: RewardWeights, step: int = 0,
              ref_params: PolicyParams | None = None,
              stage: str = "grpo") -> tuple[PolicyParams, StepMetrics]:
    """One sample-score-update cycle over a batch of questions.

    The rollout policy is ``params`` itself, so every ratio is 1 at the update
    point.  Randomness comes from streams keyed by (config.seed, step).
    """
    if not questions:
        raise ValueError("empty batch")
    old = params.copy()
    traces = pol.rollout(old, questions, regime, config.group_size, config.temperature,
                     config.max_len, config.seed, stage, step, config.workers)
    grad = params.zeros_like()
    loss = 0.0
    rewards, fmt, ans, lengths = [], [], [], []
    for q, group_traces in zip(questions, traces):
        group = make_group(q, group_traces, regime, weights, config.std_eps)
        rewards.append(group.rewards)
        fmt.append(group.formats)
        ans.append(group.answers)
        lengths += [parse(t.tokens).completion_length for t in group_traces]
        if not group.advantages.any() and config.kl_coef == 0:
            continue
        g_loss, g_grad = surrogate_loss(params, old, group, q, config, ref_params)
        loss += g_loss
        grad.iadd_scaled(1.0, g_grad)
    n = len(questions)
    new = params.add_scaled(-config.learning_rate / n, grad)
    metrics = StepMetrics(
        step=step,
        mean_reward=float(np.mean(np.concatenate(rewards))),
        format_rate=float(np.mean(np.concatenate(fmt))),
        answer_rate=float(np.mean(np.concatenate(ans))),
        mean_completion_length=float(np.mean(lengths)),
        loss=loss / n,
    )
    return new, metrics


def batches(plan_ids: Sequence[int], batch_size: int) -> list[list[int]]:
    return [list(plan_ids[i:i + batch_size]) for i in range(0, len(plan_ids), batch_size)]


def grpo_train(params: PolicyParams, plan_ids: Sequence[int], dataset: dict[int, Question],
               regime: Regime, config: GrpoConfig, weights: RewardWeights,
               metrics_sink: Callable[[StepMetrics], None] | None = None,
               ) -> tuple[PolicyParams, list[StepMetrics]]:
    """Consecutive batches over the plan, ``config.epochs`` passes."""
    if len(plan_ids) == 0:
        raise ValueError("empty plan")
    missing = [q for q in plan_ids if q not in dataset]
    if missing:
        raise ValueError(f"plan references unknown question ids, e.g. {missing[:3]}")
    ref = params.copy() if config.kl_coef > 0 else None
    history: list[StepMetrics] = []
    step = 0
    for _ in range(config.epochs):
        for batch in batches(plan_ids, config.batch_size):
            params, m = grpo_step(params, [dataset[i] for i in batch], regime, config,
                                  weights, step, ref)
            history.append(m)
            if metrics_sink is not None:
                metrics_sink(m)
            log.debug("grpo step %d reward=%.3f answer=%.3f", step, m.mean_reward, m.answer_rate)
            step += 1
    return params, history


def format_metric(value: float) -> str:
    return repr(float(value))


def write_metrics_csv(history: Iterable[StepMetrics], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for m in history:
            w.writerow([m.step, *(format_metric(getattr(m, f)) for f in METRIC_FIELDS[1:])])


def read_metrics_csv(path) -> list[dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: float(v) for k, v in r.items()} for r in rows]
