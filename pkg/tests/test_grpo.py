from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cotgrpo import policy as pol
from cotgrpo.grammar import Regime, Token
from cotgrpo.grpo import (METRIC_FIELDS, GrpoConfig, Group, batches, compute_advantages,
                          grpo_step, grpo_train, read_metrics_csv, surrogate_loss,
                          write_metrics_csv)
from cotgrpo.reward import RewardWeights

from helpers import fd_coords, fd_instance, forced_params, make_question, random_params
import oracles as o

W = RewardWeights()


# -- advantages

@pytest.mark.parametrize("rewards, expected", [
    ([1, 1, 1, 1], [0, 0, 0, 0]),
    ([1, 0, 0, 0], [1.7321, -0.5774, -0.5774, -0.5774]),
    ([1.5, 0.5, 0.5, 1.5], [1, -1, -1, 1]),
])
def test_advantage_examples(rewards, expected):
    assert np.allclose(compute_advantages(rewards), expected, atol=1e-3)


def test_advantage_needs_two_rewards():
    with pytest.raises(ValueError):
        compute_advantages([1.0])


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
def test_advantages_match_stdlib_oracle(rewards):
    got = compute_advantages(rewards)
    ref = o.advantages(rewards)
    assert np.allclose(got, ref, atol=1e-9)
    if not got.any():
        return
    assert abs(got.mean()) < 1e-9


@given(st.floats(-5, 5), st.integers(2, 8))
def test_equal_rewards_give_exact_zeros(r, n):
    adv = compute_advantages([r] * n)
    assert np.array_equal(adv, np.zeros(n))


# -- surrogate

def _one_token_case(rho: float, adv: float, eps: float = 0.2):
    """Completion = [EOS] under the Direct prompt; old policy uniform, new
    policy tilted so the EOS ratio is exactly ``rho``."""
    old = pol.PolicyParams.zeros(4)
    new = old.copy()
    a = math.log(18 * rho / (19 - rho))  # e^a / (e^a + 18) = rho / 19
    new.theta[pol.prompt_start(Regime.DIRECT), Token.EOS] = a
    q = make_question()
    trace = pol.Trace((int(Token.EOS),), np.array([math.log(1 / 19)]), Regime.DIRECT)
    group = Group(q.id, [trace], np.array([0.0]), np.array([adv]))
    return surrogate_loss(new, old, group, q, GrpoConfig(clip_eps=eps))


def test_clip_example():
    loss, grad = _one_token_case(2.0, 1.0)
    assert loss == pytest.approx(-1.2, abs=1e-12)
    assert loss == pytest.approx(-o.clip_term(2.0, 1.0, 0.2))
    # the clipped branch is flat
    assert not grad.flat().any()


@pytest.mark.parametrize("rho, adv", [(0.5, 1.0), (2.0, -1.0), (1.1, 1.0), (0.7, -2.0)])
def test_clip_formula_against_oracle(rho, adv):
    loss, grad = _one_token_case(rho, adv)
    assert loss == pytest.approx(-o.clip_term(rho, adv, 0.2), abs=1e-12)
    clipped = (rho * adv) > (np.clip(rho, 0.8, 1.2) * adv)
    assert grad.flat().any() != clipped


def test_zero_advantages_give_zero_loss_and_gradient(rng):
    params = random_params(rng)
    q = make_question(features=rng.normal(size=4))
    traces = [pol.sample(params, q, Regime.STRUCTURED, 1.0, rng) for _ in range(4)]
    group = Group(q.id, traces, np.ones(4), np.zeros(4))
    loss, grad = surrogate_loss(params, params.copy(), group, q, GrpoConfig())
    assert loss == 0.0
    assert not grad.flat().any()


def _random_group(rng, params, q, prompt, G=4):
    traces = [pol.sample(params, q, prompt, 1.0, rng, 20) for _ in range(G)]
    return Group(q.id, traces, np.zeros(G), rng.normal(0, 1, G))


def _near_kink(params, old, group, q, eps):
    for t in group.completions:
        rho = np.exp(pol.logprob(params, t, q)[1] - pol.logprob(old, t, q)[1])
        if np.any(np.abs(rho - (1 - eps)) < 1e-3) or np.any(np.abs(rho - (1 + eps)) < 1e-3):
            return True
    return False


def surrogate_fd_error(rng, kl_coef=0.0) -> float:
    old, trace, q = fd_instance(rng)
    params = old.add_scaled(rng.uniform(0.02, 0.3), random_params(rng))
    group = _random_group(rng, old, q, trace.regime_prompt)
    cfg = GrpoConfig(kl_coef=kl_coef)
    ref = random_params(rng) if kl_coef else None
    if _near_kink(params, old, group, q, cfg.clip_eps):
        return 0.0
    _, grad = surrogate_loss(params, old, group, q, cfg, ref)
    x = params.flat()
    idx = sorted(set().union(*(set(fd_coords(params, t, rng, extra=5)) for t in group.completions)))
    fd = o.central_diff(lambda v: surrogate_loss(params.with_flat(v), old, group, q, cfg, ref)[0],
                        x, idx)
    return o.rel_err(grad.flat()[idx], fd)


def test_surrogate_gradient_finite_differences(rng):
    assert max(surrogate_fd_error(rng) for _ in range(10)) < 1e-4


def test_kl_gradient_finite_differences(rng):
    assert max(surrogate_fd_error(rng, kl_coef=0.1) for _ in range(5)) < 1e-4


def test_zero_kl_loss_equals_plain_clip_objective(rng):
    old = random_params(rng)
    params = old.add_scaled(0.2, random_params(rng))
    q = make_question(features=rng.normal(size=4))
    group = _random_group(rng, old, q, Regime.UNSTRUCTURED)
    loss, _ = surrogate_loss(params, old, group, q, GrpoConfig(kl_coef=0.0),
                             ref_params=random_params(rng))
    ref = 0.0
    for t, adv in zip(group.completions, group.advantages):
        rho = np.exp(pol.logprob(params, t, q)[1] - pol.logprob(old, t, q)[1])
        ref -= sum(o.clip_term(r, adv, 0.2) for r in rho) / (len(group.completions) * len(rho))
    assert loss == pytest.approx(ref, rel=1e-12)


def test_surrogate_rejects_shape_mismatch(rng):
    q = make_question()
    group = Group(0, [], np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        surrogate_loss(pol.PolicyParams.zeros(4), pol.PolicyParams.zeros(5), group, q,
                       GrpoConfig())


# -- config

@pytest.mark.parametrize("kwargs", [dict(group_size=1), dict(clip_eps=0.0), dict(clip_eps=1.0),
                                    dict(kl_coef=-0.1), dict(learning_rate=-1.0),
                                    dict(batch_size=0), dict(epochs=0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        GrpoConfig(**kwargs)


# -- steps and training

def test_identical_rewards_leave_params_unchanged():
    p = forced_params(Regime.DIRECT)
    qs = [make_question(i, correct=i % 4) for i in range(6)]
    new, m = grpo_step(p, qs, Regime.DIRECT, GrpoConfig(learning_rate=3.0), W)
    assert new.equals(p)
    assert m.format_rate == 1.0
    assert m.mean_completion_length == 3.0


def _toy_dataset(n=64, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return {i: make_question(i, i % 4, d, rng.normal(size=d) + 2 * np.eye(d)[i % 4])
            for i in range(n)}


def test_grpo_step_independent_of_workers():
    data = _toy_dataset(16)
    p = pol.base_params(np.eye(4), 0)
    cfg1 = GrpoConfig(learning_rate=1.0, seed=3, workers=1)
    cfg4 = GrpoConfig(learning_rate=1.0, seed=3, workers=4)
    a, ma = grpo_step(p, list(data.values()), Regime.UNSTRUCTURED, cfg1, W, step=5)
    b, mb = grpo_step(p, list(data.values()), Regime.UNSTRUCTURED, cfg4, W, step=5)
    assert a.equals(b) and ma == mb


def test_grpo_train_step_count_and_metrics(tmp_path):
    data = _toy_dataset(64)
    p = pol.base_params(np.eye(4), 0)
    seen = []
    final, history = grpo_train(p, list(data), data, Regime.DIRECT,
                                GrpoConfig(batch_size=32, learning_rate=1.0), W, seen.append)
    assert len(history) == 2 and seen == history
    for m in history:
        assert 0 <= m.format_rate <= 1 and 0 <= m.answer_rate <= 1
        assert 0 <= m.mean_completion_length <= 64
    assert not final.equals(p)
    write_metrics_csv(history, tmp_path / "m.csv")
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header == ",".join(METRIC_FIELDS)
    rows = read_metrics_csv(tmp_path / "m.csv")
    assert [r["answer_rate"] for r in rows] == [m.answer_rate for m in history]


def test_grpo_train_epochs_repeat_the_plan():
    data = _toy_dataset(20)
    _, history = grpo_train(pol.base_params(np.eye(4), 0), list(data), data, Regime.DIRECT,
                            GrpoConfig(batch_size=8, epochs=2), W)
    assert [m.step for m in history] == list(range(6))


def test_zero_learning_rate_is_identity():
    data = _toy_dataset(32)
    p = pol.base_params(np.eye(4), 0)
    final, _ = grpo_train(p, list(data), data, Regime.STRUCTURED,
                          GrpoConfig(learning_rate=0.0, batch_size=16), W)
    assert final.equals(p)


def test_grpo_train_rejects_bad_plans():
    data = _toy_dataset(4)
    p = pol.base_params(np.eye(4), 0)
    with pytest.raises(ValueError):
        grpo_train(p, [], data, Regime.DIRECT, GrpoConfig(), W)
    with pytest.raises(ValueError):
        grpo_train(p, [99], data, Regime.DIRECT, GrpoConfig(), W)


def test_batches_are_consecutive():
    assert batches([5, 4, 3, 2, 1], 2) == [[5, 4], [3, 2], [1]]


def test_grpo_learns_on_an_easy_task():
    data = _toy_dataset(256, seed=1)
    p = pol.base_params(np.zeros((4, 4)), 0)
    _, history = grpo_train(p, list(data) * 2, data, Regime.DIRECT,
                            GrpoConfig(batch_size=32, learning_rate=10.0), W)
    early = np.mean([m.answer_rate for m in history[:2]])
    late = np.mean([m.answer_rate for m in history[-2:]])
    assert late > early + 0.2
