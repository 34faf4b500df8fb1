from __future__ import annotations

import functools
import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cotgrpo import curriculum as cur
from cotgrpo.curriculum import (CurriculumPlan, PassRate, estimate_pass_rate,
                                estimate_pass_rates, filter_zero_pass, load_plan,
                                order_by_difficulty, save_plan, shuffled_plan)

from helpers import HARD, known_success_policy, make_question
import oracles as o


def _qs(ids):
    return [make_question(i) for i in ids]


# -- pass rates

def test_pass_rate_type():
    r = PassRate(3, 16, 4)
    assert r.rate == 0.25
    with pytest.raises(ValueError):
        PassRate(3, 16, 17)
    with pytest.raises(ValueError):
        PassRate(3, 16, -1)


def test_default_attempts_is_sixteen():
    assert cur.DEFAULT_ATTEMPTS == 16
    params, qs = known_success_policy([0.0])
    assert estimate_pass_rate(params, qs[0]).attempts == 16


def test_certain_policy_has_rate_one():
    params, qs = known_success_policy([HARD] * 10)
    assert all(r.rate == 1.0 for r in estimate_pass_rates(params, qs))


@pytest.mark.parametrize("p", [0.25, 0.5, 0.9])
def test_mean_rate_matches_analytic_probability(p):
    params, qs = known_success_policy([o.logit_for_success(p)] * 1000)
    rates = estimate_pass_rates(params, qs, attempts=16, seed=2)
    mean = np.mean([r.rate for r in rates])
    assert abs(mean - p) <= o.binomial_3sigma(p, 16 * 1000)
    if p == 0.5:
        assert 0.47 <= mean <= 0.53


def test_rates_are_seeded_and_worker_independent():
    params, qs = known_success_policy(np.linspace(-1, 3, 40))
    a = estimate_pass_rates(params, qs, seed=9, workers=1)
    b = estimate_pass_rates(params, qs, seed=9, workers=5)
    c = estimate_pass_rates(params, qs, seed=10)
    assert a == b and a != c


def test_attempts_validated():
    params, qs = known_success_policy([0.0])
    with pytest.raises(ValueError):
        estimate_pass_rates(params, qs, attempts=0)


# -- filtering

def test_filter_example():
    qs = _qs([1, 2, 3])
    kept = filter_zero_pass(qs, {1: 0.0, 2: 0.25, 3: 1.0})
    assert [q.id for q in kept] == [2, 3]


def test_filter_identity_and_full_filter():
    qs = _qs([5, 2, 9])
    assert filter_zero_pass(qs, {5: 0.1, 2: 0.5, 9: 1.0}) == qs
    assert filter_zero_pass(qs, {5: 0.0, 2: 0.0, 9: 0.0}) == []


def test_filter_accepts_pass_rate_objects():
    qs = _qs([1, 2])
    kept = filter_zero_pass(qs, [PassRate(1, 16, 0), PassRate(2, 16, 3)])
    assert [q.id for q in kept] == [2]


def test_filter_missing_rate_is_an_error():
    with pytest.raises(KeyError):
        filter_zero_pass(_qs([1, 2]), {1: 0.5})


rates_st = st.lists(st.integers(0, 16), min_size=1, max_size=60).map(
    lambda xs: {i * 7 % 101: x / 16 for i, x in enumerate(xs)})


@given(rates_st)
def test_filter_removes_exactly_zero_rates(rates):
    qs = _qs(rates)
    kept = filter_zero_pass(qs, rates)
    assert [q.id for q in kept] == [i for i in rates if rates[i] != 0]


# -- ordering

def test_order_examples():
    plan = order_by_difficulty(_qs([1, 2, 3]), {1: 0.2, 2: 1.0, 3: 0.5})
    assert plan.ids == (2, 3, 1) and plan.ordering_kind == cur.CURRICULUM
    assert order_by_difficulty(_qs([2, 1]), {1: 0.5, 2: 0.5}).ids == (1, 2)


def _oracle_order(rates, descending=True):
    """Comparator sort, independent of key-based sorting."""
    def cmp(a, b):
        if rates[a] != rates[b]:
            return (-1 if rates[a] > rates[b] else 1) * (1 if descending else -1)
        return (a > b) - (a < b)
    return sorted(rates, key=functools.cmp_to_key(cmp))


@given(rates_st)
def test_order_matches_sort_oracle(rates):
    plan = order_by_difficulty(_qs(rates), rates)
    assert list(plan.ids) == _oracle_order(rates)
    assert sorted(plan.ids) == sorted(rates)
    along = [rates[i] for i in plan.ids]
    assert all(a >= b for a, b in zip(along, along[1:]))


@given(rates_st)
def test_reversed_plan_is_ascending_with_reversed_ties(rates):
    plan = order_by_difficulty(_qs(rates), rates)
    asc = sorted(rates, key=lambda i: (rates[i], -i))
    assert list(reversed(plan.ids)) == asc


# -- shuffled plans

def test_shuffled_plan_is_deterministic_permutation():
    qs = _qs(range(50))
    a, b = shuffled_plan(qs, 3), shuffled_plan(qs, 3)
    assert a == b and a.ordering_kind == cur.SHUFFLED and a.seed == 3
    assert sorted(a.ids) == list(range(50))
    assert shuffled_plan(qs, 4).ids != a.ids


def test_shuffled_plan_rejects_empty():
    with pytest.raises(ValueError):
        shuffled_plan([], 0)


def test_shuffles_are_uniform_over_permutations():
    qs = _qs(range(4))
    n = 10_000
    counts = Counter(shuffled_plan(qs, s).ids for s in range(n))
    assert set(counts) == set(itertools.permutations(range(4)))
    p = 1 / 24
    tol = 3 * (p * (1 - p) / n) ** 0.5
    assert all(abs(c / n - p) <= tol for c in counts.values())
    # Pearson chi-square, 23 dof; 99.9% quantile is 49.7
    chi2 = sum((c - n * p) ** 2 / (n * p) for c in counts.values())
    assert chi2 < 49.7


# -- persistence

@pytest.mark.parametrize("plan", [CurriculumPlan((4, 1, 3), cur.CURRICULUM),
                                  CurriculumPlan((9, 8), cur.SHUFFLED, 12)])
def test_plan_round_trip(tmp_path, plan):
    save_plan(plan, tmp_path / "plan.txt")
    text = (tmp_path / "plan.txt").read_text()
    assert text.startswith(f"# ordering_kind={plan.ordering_kind}")
    assert load_plan(tmp_path / "plan.txt") == plan


@pytest.mark.parametrize("text", ["1\n2\n", "# ordering_kind=weird seed=\n1\n",
                                  "# ordering_kind=shuffled seed=1\n1\n1\n"])
def test_bad_plan_files(tmp_path, text):
    (tmp_path / "p.txt").write_text(text)
    with pytest.raises(ValueError):
        load_plan(tmp_path / "p.txt")
