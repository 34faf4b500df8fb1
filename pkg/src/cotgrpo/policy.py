"""Compact autoregressive policy over the trace vocabulary.

The policy is a logit table indexed by a tracking state and a token.  The
tracking state is the prompt (one slice per regime) combined with a small
automaton that follows the ``<THINK>`` body: which section tag was last
opened or closed in the canonical Planning/Caption/Reasoning/Summary order, or
"freeform" once anything else appears.  It does not enforce the grammar; every
token stays sampleable in every state.

Two further parameter groups:

* ``W`` (4 x d) adds ``W @ x`` to the four option logits at the answer slot
  (the state right after ``<ANSWER>``).  It is the only feature-dependent part.
* ``length_bias`` (one scalar per body section) adds
  ``length_bias[j] * n / RUN_SCALE`` to the ``CONTENT`` logit, where ``n``
  counts the tokens already emitted in the current section.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grammar import OPTIONS, VOCAB_SIZE, Regime, Token
from .rng import stream

PROMPTS = (Regime.DIRECT, Regime.STRUCTURED, Regime.UNSTRUCTURED)
PROMPT_INDEX = {r: i for i, r in enumerate(PROMPTS)}

# local tracking states
START = 0
BODY0 = 1            # body progress k lives at BODY0 + k, k = 0..9
FREEFORM = BODY0 + 9
AFTER_THINK = 11
ANSWER_SLOT = 12
ANSWER_CHOSEN = 13
ANSWER_CLOSED = 14
SINK = 15
LOCAL_STATES = 16
N_STATES = LOCAL_STATES * len(PROMPTS)

N_SECTIONS = 5       # planning, caption, reasoning, summary, freeform
RUN_SCALE = 8.0      # run lengths enter the CONTENT logit as n / RUN_SCALE
DEFAULT_MAX_LEN = 64

_OPT_LO, _OPT_HI = int(Token.OPT_A), int(Token.OPT_D) + 1
_CONTENT = int(Token.CONTENT)
_EOS = int(Token.EOS)


def _build_tracker() -> tuple[np.ndarray, np.ndarray]:
    nxt = np.full((LOCAL_STATES, VOCAB_SIZE), SINK, dtype=np.int64)
    nxt[START, Token.THINK_OPEN] = BODY0
    nxt[START, Token.ANSWER_OPEN] = ANSWER_SLOT
    for k in range(10):
        s = BODY0 + k
        nxt[s, :] = FREEFORM
        nxt[s, Token.THINK_CLOSE] = AFTER_THINK
        nxt[s, Token.EOS] = SINK
        if k % 2 == 0 and k < 8:
            nxt[s, 2 + k] = s + 1            # section open tag
        if k % 2 == 1 and k < 9:
            nxt[s, Token.CONTENT] = s        # stay in section
            nxt[s, 2 + k] = s + 1            # section close tag
    nxt[AFTER_THINK, Token.ANSWER_OPEN] = ANSWER_SLOT
    for opt in OPTIONS:
        nxt[ANSWER_SLOT, opt] = ANSWER_CHOSEN
    nxt[ANSWER_CHOSEN, Token.ANSWER_CLOSE] = ANSWER_CLOSED
    section = np.full(LOCAL_STATES, -1, dtype=np.int64)
    for j, k in enumerate((1, 3, 5, 7, 9)):
        section[BODY0 + k] = j
    return nxt, section


_LOCAL_NEXT, _LOCAL_SECTION = _build_tracker()
# Global tables over all prompt slices.
TRACK_NEXT = np.concatenate([_LOCAL_NEXT + LOCAL_STATES * p for p in range(len(PROMPTS))])
STATE_SECTION = np.tile(_LOCAL_SECTION, len(PROMPTS))
IS_ANSWER_SLOT = np.tile(np.arange(LOCAL_STATES) == ANSWER_SLOT, len(PROMPTS))


def prompt_start(prompt: Regime) -> int:
    return PROMPT_INDEX[prompt] * LOCAL_STATES


def advance(state: int, run: int, token: int) -> tuple[int, int]:
    """Next (tracking state, section run length) after emitting ``token``."""
    nxt = int(TRACK_NEXT[state, token])
    if STATE_SECTION[nxt] < 0:
        return nxt, 0
    if nxt == state:
        return nxt, run + 1
    return nxt, 1 if nxt % LOCAL_STATES == FREEFORM else 0


def tracking_path(tokens: Sequence[int], prompt: Regime) -> tuple[np.ndarray, np.ndarray]:
    """States and run lengths *before* each token of ``tokens``."""
    L = len(tokens)
    states = np.empty(L, dtype=np.int64)
    runs = np.empty(L, dtype=np.int64)
    s, n = prompt_start(prompt), 0
    for t, tok in enumerate(tokens):
        states[t], runs[t] = s, n
        s, n = advance(s, n, int(tok))
    return states, runs


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PolicyParams:
    theta: np.ndarray
    W: np.ndarray
    length_bias: np.ndarray

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, d: int = 8) -> "PolicyParams":
        return cls(np.zeros((N_STATES, VOCAB_SIZE)), np.zeros((len(OPTIONS), d)),
                   np.zeros(N_SECTIONS))

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams.zeros(self.d)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.theta.copy(), self.W.copy(), self.length_bias.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"theta": self.theta, "W": self.W, "length_bias": self.length_bias}

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta.ravel(), self.W.ravel(), self.length_bias])

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        a, b = self.theta.size, self.theta.size + self.W.size
        return PolicyParams(vec[:a].reshape(self.theta.shape).copy(),
                            vec[a:b].reshape(self.W.shape).copy(), vec[b:].copy())

    def add_scaled(self, alpha: float, other: "PolicyParams") -> "PolicyParams":
        return PolicyParams(self.theta + alpha * other.theta, self.W + alpha * other.W,
                            self.length_bias + alpha * other.length_bias)

    def scaled(self, alpha: float) -> "PolicyParams":
        return PolicyParams(alpha * self.theta, alpha * self.W, alpha * self.length_bias)

    def iadd_scaled(self, alpha: float, other: "PolicyParams") -> None:
        self.theta += alpha * other.theta
        self.W += alpha * other.W
        self.length_bias += alpha * other.length_bias

    def equals(self, other: "PolicyParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays().values(),
                                                        other.arrays().values()))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays().values())


def init_params(d: int = 8, seed: int = 0, scale: float = 0.01) -> PolicyParams:
    """theta ~ U(-scale, scale), W = 0, length_bias = 0."""
    rng = np.random.default_rng([seed, 0x696E6974])
    p = PolicyParams.zeros(d)
    p.theta[:] = rng.uniform(-scale, scale, size=p.theta.shape)
    return p


@dataclass(frozen=True)
class BaseConfig:
    """Prior that turns a near-uniform init into an instruction-following base.

    ``format_strength`` is the logit bonus on each skeleton token the prompt
    asks for; ``think_continue`` is the log-odds of CONTENT against
    ``</THINK>`` inside a reasoning body; ``knowledge`` scales the answer
    read-out built from the shared prototype frame.
    """
    format_strength: float = 6.0
    think_continue: float = 0.7
    knowledge: float = 1.0


def base_params(frame: np.ndarray, seed: int = 0,
                config: BaseConfig = BaseConfig()) -> PolicyParams:
    p = init_params(frame.shape[1], seed)
    a = config.format_strength
    for prompt in PROMPTS:
        o = prompt_start(prompt)
        if prompt is Regime.DIRECT:
            p.theta[o + START, Token.ANSWER_OPEN] += a
        else:
            p.theta[o + START, Token.THINK_OPEN] += a
        for k in range(10):
            p.theta[o + BODY0 + k, Token.CONTENT] += a
            p.theta[o + BODY0 + k, Token.THINK_CLOSE] += a - config.think_continue
        p.theta[o + AFTER_THINK, Token.ANSWER_OPEN] += a
        p.theta[o + ANSWER_SLOT, _OPT_LO:_OPT_HI] += a
        p.theta[o + ANSWER_CHOSEN, Token.ANSWER_CLOSE] += a
        p.theta[o + ANSWER_CLOSED, Token.EOS] += a
    p.W[:] = config.knowledge * frame
    return p


# ---------------------------------------------------------------------------
# Traces, sampling, likelihood
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Trace:
    tokens: tuple[int, ...]
    logprobs: np.ndarray
    regime_prompt: Regime
    temperature: float = 1.0
    question_id: int | None = None
    total_logprob: float = field(init=False)

    def __post_init__(self) -> None:
        self.total_logprob = float(np.sum(self.logprobs))

    def __len__(self) -> int:
        return len(self.tokens)


def _logits(params: PolicyParams, states: np.ndarray, runs: np.ndarray,
            features: np.ndarray) -> np.ndarray:
    """Logit rows for a batch of (state, run, features) triples.

    ``features`` is (B, d), aligned with ``states``.
    """
    rows = params.theta[states]
    sec = STATE_SECTION[states]
    body = sec >= 0
    if body.any():
        rows[body, _CONTENT] += params.length_bias[sec[body]] * (runs[body] / RUN_SCALE)
    slot = IS_ANSWER_SLOT[states]
    if slot.any():
        rows[slot, _OPT_LO:_OPT_HI] += features[slot] @ params.W.T
    return rows


def _log_softmax(z: np.ndarray) -> np.ndarray:
    # cumsum keeps the reduction order fixed across batch shapes.
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.cumsum(np.exp(z), axis=1)[:, -1:])


def _check_sampling_args(temperature: float, max_len: int) -> None:
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if max_len < 4:
        raise ValueError(f"max_len must be >= 4, got {max_len}")


def sample_batch(params: PolicyParams, features: np.ndarray, prompt: Regime,
                 temperature: float, uniforms: np.ndarray,
                 max_len: int = DEFAULT_MAX_LEN, question_ids: Sequence[int] | None = None
                 ) -> list[Trace]:
    """Ancestral sampling of B traces in lockstep.

    ``uniforms`` is (B, max_len); row ``b`` drives trace ``b`` by inverse-CDF
    lookup, so each trace depends only on its own row.
    """
    _check_sampling_args(temperature, max_len)
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    B = features.shape[0]
    tokens = np.full((B, max_len), -1, dtype=np.int64)
    logps = np.zeros((B, max_len))
    lengths = np.full(B, max_len, dtype=np.int64)
    states = np.full(B, prompt_start(prompt), dtype=np.int64)
    runs = np.zeros(B, dtype=np.int64)
    active = np.arange(B)
    for t in range(max_len):
        if active.size == 0:
            break
        z = _logits(params, states[active], runs[active], features[active])
        lp = _log_softmax(z / temperature)
        cdf = np.cumsum(np.exp(lp), axis=1)
        u = uniforms[active, t][:, None] * cdf[:, -1:]
        chosen = np.minimum((cdf < u).sum(axis=1), VOCAB_SIZE - 1)
        tokens[active, t] = chosen
        logps[active, t] = lp[np.arange(active.size), chosen]
        for i, b in enumerate(active):
            states[b], runs[b] = advance(int(states[b]), int(runs[b]), int(chosen[i]))
        done = chosen == _EOS
        lengths[active[done]] = t + 1
        active = active[~done]
    out = []
    for b in range(B):
        n = int(lengths[b])
        out.append(Trace(tuple(int(v) for v in tokens[b, :n]), logps[b, :n].copy(), prompt,
                         temperature, None if question_ids is None else int(question_ids[b])))
    return out


def sample(params: PolicyParams, question, regime_prompt: Regime, temperature: float,
           rng: np.random.Generator, max_len: int = DEFAULT_MAX_LEN) -> Trace:
    _check_sampling_args(temperature, max_len)
    u = rng.random((1, max_len))
    return sample_batch(params, question.features, regime_prompt, temperature, u, max_len,
                        [question.id])[0]


def _token_logprobs(params: PolicyParams, tokens: Sequence[int], prompt: Regime,
                    features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    states, runs = tracking_path(tokens, prompt)
    feats = np.broadcast_to(features, (len(tokens), features.shape[0]))
    lp = _log_softmax(_logits(params, states, runs, feats))
    return lp, states, runs, np.asarray(tokens, dtype=np.int64)


def logprob(params: PolicyParams, trace: Trace, question) -> tuple[float, np.ndarray]:
    """Exact log-probability of ``trace`` at temperature 1."""
    if not trace.tokens:
        return 0.0, np.zeros(0)
    lp, _, _, toks = _token_logprobs(params, trace.tokens, trace.regime_prompt,
                                     question.features)
    per_token = lp[np.arange(len(toks)), toks]
    return float(np.sum(per_token)), per_token


def accumulate_grad(grad: PolicyParams, params: PolicyParams, tokens: Sequence[int],
                    prompt: Regime, features: np.ndarray, coef: np.ndarray | float = 1.0
                    ) -> np.ndarray:
    """Add ``sum_t coef_t * d log pi(token_t) / d params`` into ``grad``.

    Returns the per-token log-probabilities.
    """
    if len(tokens) == 0:
        return np.zeros(0)
    lp, states, runs, toks = _token_logprobs(params, tokens, prompt, features)
    L = len(toks)
    coef = np.broadcast_to(np.asarray(coef, dtype=np.float64), (L,))
    g = -np.exp(lp)
    g[np.arange(L), toks] += 1.0
    g *= coef[:, None]
    np.add.at(grad.theta, states, g)
    sec = STATE_SECTION[states]
    body = sec >= 0
    if body.any():
        np.add.at(grad.length_bias, sec[body], g[body, _CONTENT] * (runs[body] / RUN_SCALE))
    slot = IS_ANSWER_SLOT[states]
    if slot.any():
        grad.W += np.outer(g[slot, _OPT_LO:_OPT_HI].sum(axis=0), features)
    return lp[np.arange(L), toks]


def grad_logprob(params: PolicyParams, trace: Trace, question) -> PolicyParams:
    grad = params.zeros_like()
    accumulate_grad(grad, params, trace.tokens, trace.regime_prompt, question.features)
    return grad


def greedy_decode(params: PolicyParams, question, regime_prompt: Regime,
                  max_len: int = DEFAULT_MAX_LEN) -> Trace:
    """Argmax decoding; ties go to the lowest token code."""
    _check_sampling_args(1.0, max_len)
    feats = np.atleast_2d(question.features)
    s, n = prompt_start(regime_prompt), 0
    toks, lps = [], []
    for _ in range(max_len):
        lp = _log_softmax(_logits(params, np.array([s]), np.array([n]), feats))[0]
        tok = int(np.argmax(lp))
        toks.append(tok)
        lps.append(lp[tok])
        if tok == _EOS:
            break
        s, n = advance(s, n, tok)
    return Trace(tuple(toks), np.array(lps), regime_prompt, 1.0, question.id)


def next_token_distribution(params: PolicyParams, state: int, run: int,
                            features: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(_logits(params, np.array([state]), np.array([run]),
                                       np.atleast_2d(features)))[0])


# ---------------------------------------------------------------------------
# Rollouts over question batches
# ---------------------------------------------------------------------------

def _uniforms(seed: int, stage: str, step: int, qid: int, trial: int, max_len: int) -> np.ndarray:
    return stream(seed, stage, step, qid, trial).random(max_len)


def rollout(params: PolicyParams, questions: Sequence, prompt: Regime,
            n_samples: int, temperature: float, max_len: int, seed: int, stage: str,
            step: int = 0, workers: int = 1) -> list[list[Trace]]:
    """``n_samples`` traces per question, each from the stream
    (seed, stage, step, question id, trial).  Independent of ``workers``."""
    if not questions:
        return []

    def work(chunk: Sequence) -> list[Trace]:
        feats = np.repeat(np.stack([q.features for q in chunk]), n_samples, axis=0)
        u = np.stack([_uniforms(seed, stage, step, q.id, k, max_len)
                      for q in chunk for k in range(n_samples)])
        ids = [q.id for q in chunk for _ in range(n_samples)]
        return sample_batch(params, feats, prompt, temperature, u, max_len, ids)

    if workers <= 1:
        flat = work(questions)
    else:
        size = math.ceil(len(questions) / workers)
        chunks = [questions[i:i + size] for i in range(0, len(questions), size)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            flat = [t for part in pool.map(work, chunks) for t in part]
    return [flat[i * n_samples:(i + 1) * n_samples] for i in range(len(questions))]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(params: PolicyParams, path: str | Path) -> None:
    """``.npz`` archive of named float64 arrays plus a format version."""
    buf = io.BytesIO()
    np.savez(buf, version=np.array(CHECKPOINT_VERSION), **params.arrays())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> PolicyParams:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = PolicyParams(data["theta"].copy(), data["W"].copy(), data["length_bias"].copy())
    if params.theta.shape != (N_STATES, VOCAB_SIZE) or params.length_bias.shape != (N_SECTIONS,):
        raise ValueError(f"checkpoint {path} has unexpected shapes")
    return params
