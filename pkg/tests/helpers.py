"""Shared builders for tests."""

from __future__ import annotations

import numpy as np

from cotgrpo import policy as pol
from cotgrpo.grammar import OPTIONS, Regime, Token
from cotgrpo.synth import Question

HARD = 50.0  # logit gap that makes a token effectively certain


def make_question(qid=0, correct=0, d=4, features=None, category="sound", signal=1.0):
    x = np.zeros(d) if features is None else np.asarray(features, dtype=float)
    return Question(qid, category, signal, x, correct)


def forced_params(regime: Regime, d: int = 4) -> pol.PolicyParams:
    """One-hot policy that emits the regime's shortest skeleton answering A."""
    p = pol.PolicyParams.zeros(d)
    o = pol.prompt_start(regime)
    path = {
        Regime.DIRECT: [(pol.START, Token.ANSWER_OPEN)],
        Regime.UNSTRUCTURED: [(pol.START, Token.THINK_OPEN),
                              (pol.BODY0, Token.THINK_CLOSE),
                              (pol.AFTER_THINK, Token.ANSWER_OPEN)],
    }[regime]
    path = path + [(pol.ANSWER_SLOT, Token.OPT_A), (pol.ANSWER_CHOSEN, Token.ANSWER_CLOSE),
                   (pol.ANSWER_CLOSED, Token.EOS)]
    for state, tok in path:
        p.theta[o + state, :] = -HARD
        p.theta[o + state, tok] = HARD
    return p


def known_success_policy(margins) -> tuple[pol.PolicyParams, list[Question]]:
    """Direct-prompt policy whose success probability on question i is
    e^{m_i} / (e^{m_i} + 3), exactly, up to e^-50 leakage.

    Features are ``m_i * e_correct``, W is the identity, so the answer-slot
    logits are m_i on the correct option and 0 on the other three.
    """
    d = len(OPTIONS)
    p = pol.PolicyParams.zeros(d)
    o = pol.prompt_start(Regime.DIRECT)
    for state, tok in [(pol.START, Token.ANSWER_OPEN), (pol.ANSWER_CHOSEN, Token.ANSWER_CLOSE),
                       (pol.ANSWER_CLOSED, Token.EOS)]:
        p.theta[o + state, :] = -HARD
        p.theta[o + state, tok] = HARD
    p.theta[o + pol.ANSWER_SLOT, :] = -HARD
    p.theta[o + pol.ANSWER_SLOT, Token.OPT_A:Token.OPT_D + 1] = 0.0
    p.W[:] = np.eye(d)
    qs = []
    for i, m in enumerate(margins):
        c = i % 4
        qs.append(make_question(i, c, d, m * np.eye(d)[c], ("sound", "music", "speech")[i % 3]))
    return p, qs


def random_params(rng: np.random.Generator, d: int = 4, scale: float = 1.0) -> pol.PolicyParams:
    p = pol.PolicyParams.zeros(d)
    p.theta[:] = rng.normal(0, scale, p.theta.shape)
    p.W[:] = rng.normal(0, scale, p.W.shape)
    p.length_bias[:] = rng.normal(0, scale, p.length_bias.shape)
    return p


def fd_instance(rng: np.random.Generator, d: int = 4):
    """Random (params, trace, question) for finite-difference checks.

    Half the traces are sampled from the random policy, half are grammar
    skeletons so section states and the answer slot are exercised.
    """
    from cotgrpo.grammar import skeleton

    params = random_params(rng, d, scale=rng.uniform(0.3, 1.5))
    q = make_question(int(rng.integers(1000)), int(rng.integers(4)), d, rng.normal(0, 1, d))
    prompt = [Regime.DIRECT, Regime.STRUCTURED, Regime.UNSTRUCTURED][int(rng.integers(3))]
    if rng.random() < 0.5:
        trace = pol.sample(params, q, prompt, 1.0, rng, max_len=24)
    else:
        regime = prompt if prompt is not Regime.DIRECT else Regime.STRUCTURED
        n = 4 if regime is Regime.STRUCTURED else 1
        toks = skeleton(regime, int(rng.integers(4)), list(rng.integers(0, 5, n)))
        trace = pol.Trace(tuple(int(t) for t in toks), np.zeros(len(toks)), prompt)
    return params, trace, q


def fd_coords(params: pol.PolicyParams, trace, rng: np.random.Generator, extra: int = 20):
    """Flat indices worth checking: rows of visited states, all of W and
    length_bias, and a few random others."""
    states, _ = pol.tracking_path(trace.tokens, trace.regime_prompt)
    V = params.theta.shape[1]
    idx = {s * V + t for s in set(states.tolist()) for t in range(V)}
    start = params.theta.size
    idx |= set(range(start, params.flat().size))
    idx |= set(rng.integers(0, params.flat().size, extra).tolist())
    return sorted(idx)
