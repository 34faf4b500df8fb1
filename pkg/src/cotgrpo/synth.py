"""Synthetic four-option questions with a controllable difficulty knob.

A question's features are ``x = s * v[c, k] + (1 - s) * noise`` where
``v[c]`` holds four orthonormal prototypes for category ``c``, ``k`` is the
correct option and ``s`` in [0, 1] is the signal strength.  ``s = 1`` is
trivially separable and ``s = 0`` is pure noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

CATEGORIES = ("sound", "music", "speech")
N_OPTIONS = 4
MAX_FEATURE_NORM = 10.0

REQUIRED_FIELDS = ("id", "category", "signal", "features", "correct_index")


class DatasetError(ValueError):
    pass


@dataclass(eq=False)
class Question:
    id: int
    category: str
    signal: float
    features: np.ndarray
    correct_index: int
    pass_rate: float | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Question):
            return NotImplemented
        return (self.id == other.id and self.category == other.category
                and self.signal == other.signal
                and np.array_equal(self.features, other.features)
                and self.correct_index == other.correct_index
                and self.pass_rate == other.pass_rate and self.extra == other.extra)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "id": self.id,
            "category": self.category,
            "signal": self.signal,
            "features": [float(v) for v in self.features],
            "correct_index": self.correct_index,
        }
        if self.pass_rate is not None:
            rec["pass_rate"] = self.pass_rate
        rec.update(self.extra)
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Question":
        for name in REQUIRED_FIELDS:
            if name not in rec:
                raise DatasetError(f"missing field {name}")
        ci = rec["correct_index"]
        if not isinstance(ci, int) or not 0 <= ci < N_OPTIONS:
            raise DatasetError(f"correct_index must be an int in 0..3, got {ci!r}")
        if not isinstance(rec["id"], int):
            raise DatasetError(f"id must be an int, got {rec['id']!r}")
        feats = rec["features"]
        if not isinstance(feats, list) or not all(isinstance(v, (int, float)) for v in feats):
            raise DatasetError("features must be an array of numbers")
        extra = {k: v for k, v in rec.items() if k not in REQUIRED_FIELDS and k != "pass_rate"}
        pr = rec.get("pass_rate")
        return cls(
            id=rec["id"],
            category=str(rec["category"]),
            signal=float(rec["signal"]),
            features=np.asarray(feats, dtype=np.float64),
            correct_index=ci,
            pass_rate=None if pr is None else float(pr),
            extra=extra,
        )


@dataclass(frozen=True)
class DatasetConfig:
    n: int = 2200
    d: int = 8
    seed: int = 0
    zero_signal_frac: float = 0.05
    prototype_spread: float = 0.5
    id_offset: int = 0
    stream: int = 0


def _orthonormal_rows(a: np.ndarray) -> np.ndarray:
    # Gram-Schmidt in fixed row order so results do not depend on LAPACK.
    out = np.zeros_like(a)
    for i in range(a.shape[0]):
        v = a[i].copy()
        for j in range(i):
            v -= float(np.dot(out[j], a[i])) * out[j]
        out[i] = v / math.sqrt(float(np.dot(v, v)))
    return out


def make_prototypes(d: int, seed: int, spread: float = 0.5) -> np.ndarray:
    """Array of shape (3, 4, d); each category's four rows are orthonormal.

    Categories share a common orthonormal frame perturbed by ``spread``, so a
    single linear read-out works well but not perfectly for all of them.
    """
    if d < N_OPTIONS:
        raise ValueError(f"d must be >= {N_OPTIONS}, got {d}")
    rng = np.random.default_rng([seed, 0x70726F74])
    shared = _orthonormal_rows(rng.standard_normal((N_OPTIONS, d)))
    protos = np.empty((len(CATEGORIES), N_OPTIONS, d))
    for c in range(len(CATEGORIES)):
        protos[c] = _orthonormal_rows(shared + spread * rng.standard_normal((N_OPTIONS, d)))
    return protos


def shared_frame(d: int, seed: int) -> np.ndarray:
    """The category-independent frame the prototypes are perturbed from."""
    rng = np.random.default_rng([seed, 0x70726F74])
    return _orthonormal_rows(rng.standard_normal((N_OPTIONS, d)))


def gen_dataset(config: DatasetConfig) -> list[Question]:
    """Seeded dataset: round-robin categories, exactly balanced answer positions."""
    n, d = config.n, config.d
    if n < 4:
        raise ValueError(f"n must be >= 4, got {n}")
    if d < 4:
        raise ValueError(f"d must be >= 4, got {d}")
    protos = make_prototypes(d, config.seed, config.prototype_spread)
    rng = np.random.default_rng([config.seed, 0x64617461, config.stream])
    correct = rng.permutation(np.arange(n) % N_OPTIONS)
    zero = rng.random(n) < config.zero_signal_frac
    signal = rng.random(n)
    signal[zero] = 0.0
    noise = rng.standard_normal((n, d))

    out = []
    for i in range(n):
        cat = i % len(CATEGORIES)
        s = float(signal[i])
        x = s * protos[cat, correct[i]] + (1.0 - s) * noise[i]
        norm = math.sqrt(float(np.dot(x, x)))
        if norm > MAX_FEATURE_NORM:
            x = x * (MAX_FEATURE_NORM / norm)
        out.append(Question(
            id=config.id_offset + i,
            category=CATEGORIES[cat],
            signal=s,
            features=x,
            correct_index=int(correct[i]),
        ))
    return out


@dataclass
class DatasetSplit:
    sft_questions: list[Question]
    rl_questions: list[Question]
    eval_questions: list[Question]


def make_splits(n_sft: int, n_rl: int, n_eval: int, d: int = 8, seed: int = 0,
                zero_signal_frac: float = 0.05, prototype_spread: float = 0.5) -> DatasetSplit:
    """Three answer-balanced splits sharing one prototype set, with disjoint ids."""
    parts = []
    offset = 0
    for stream_id, n in enumerate((n_sft, n_rl, n_eval)):
        parts.append(gen_dataset(DatasetConfig(n=n, d=d, seed=seed,
                                               zero_signal_frac=zero_signal_frac,
                                               prototype_spread=prototype_spread,
                                               id_offset=offset, stream=stream_id)))
        offset += n
    return DatasetSplit(*parts)


def bayes_accuracy(s: float, d: int = 8, noise_model: str = "gaussian",
                   trials: int = 10_000, seed: int = 0) -> float:
    """Monte-Carlo accuracy of ``argmax_k v_k . x`` at signal ``s``."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must be in [0, 1], got {s}")
    if noise_model != "gaussian":
        raise ValueError(f"unsupported noise model {noise_model!r}")
    rng = np.random.default_rng([seed, 0x62617965])
    protos = _orthonormal_rows(rng.standard_normal((N_OPTIONS, d)))
    correct = rng.integers(0, N_OPTIONS, size=trials)
    x = s * protos[correct] + (1.0 - s) * rng.standard_normal((trials, d))
    pred = np.argmax(x @ protos.T, axis=1)
    return float(np.mean(pred == correct))


def save_jsonl(questions: Iterable[Question], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps(q.to_record()) + "\n")


def load_jsonl(path: str | Path) -> list[Question]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DatasetError(f"line {lineno}: expected a JSON object")
            try:
                out.append(Question.from_record(rec))
            except DatasetError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from None
    return out


def by_id(questions: Sequence[Question]) -> dict[int, Question]:
    return {q.id: q for q in questions}
