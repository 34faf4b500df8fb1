"""Binary format and answer rewards combined by a weighted sum."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from .grammar import ParseResult, Regime, parse

if TYPE_CHECKING:
    from .synth import Question


@dataclass(frozen=True)
class RewardWeights:
    format_weight: float = 0.5
    answer_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.format_weight < 0 or self.answer_weight < 0:
            raise ValueError("reward weights must be non-negative")
        if self.format_weight + self.answer_weight <= 0:
            raise ValueError("reward weights must not both be zero")


@dataclass(frozen=True)
class RewardBreakdown:
    format: int
    answer: int
    total: float


def format_reward(result: ParseResult, regime: Regime) -> int:
    return int(result.valid_for(regime))


def answer_reward(result: ParseResult, correct_index: int) -> int:
    if not 0 <= correct_index <= 3:
        raise ValueError(f"correct_index must be in 0..3, got {correct_index}")
    return int(result.extracted_answer is not None and result.extracted_answer == correct_index)


def score(result: ParseResult, correct_index: int, regime: Regime,
          weights: RewardWeights) -> RewardBreakdown:
    f = format_reward(result, regime)
    a = answer_reward(result, correct_index)
    return RewardBreakdown(f, a, weights.format_weight * f + weights.answer_weight * a)


def total_reward(tokens: Sequence[int], question: "Question", regime: Regime,
                 weights: RewardWeights = RewardWeights()) -> RewardBreakdown:
    """Parse ``tokens`` and score them against ``question`` under ``regime``."""
    return score(parse(tokens), question.correct_index, regime, weights)
