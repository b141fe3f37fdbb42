import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aoii.analytic import (
    check_condition1,
    condition_q_values,
    optimal_expected_aoii_linear,
    sigma_increment,
    sp_expected_aoii,
    sp_expected_aoii_linear,
    sp_stationary,
    tp_expected_aoii_linear,
    wp_aggregates,
    wp_expected_aoii_linear,
)
from aoii.mdp import TruncationConfig, build_truncated
from aoii.model import Deterministic, Explicit, Geometric, Linear, Logarithmic, Quadratic, SourceModel, Table, ValidationError, Zipf
from aoii.policies import StrongPreemptive, ThresholdPreemptive, WeakPreemptive
from aoii.sim import SimConfig, simulate
from aoii.solvers import stationary_distribution

ps = st.floats(0.01, 0.49)
q1s = st.floats(0.01, 1.0)


def _stationary_cost(src, d, policy, f=Linear(), dmax=400):
    mdp = build_truncated(src, d, f, TruncationConfig(dmax))
    pi = stationary_distribution(mdp, policy)
    return mdp, pi, float(pi @ mdp.costs)


# --------------------------------------------------------------------------
# strong preemption
# --------------------------------------------------------------------------


def test_sp_stationary_unit_delay():
    assert [sp_stationary(0.3, 1.0, d) for d in range(3)] == pytest.approx([0.7, 0.21, 0.063])


def test_sp_stationary_hand_values():
    assert sp_stationary(0.3, 0.7, 0) == pytest.approx(0.58 / 0.88, rel=1e-14)
    assert sp_stationary(0.3, 0.7, 1) == pytest.approx(0.174 / 0.88, rel=1e-14)


@given(ps, q1s)
def test_sp_stationary_normalised(p, q1):
    r = 1 - q1 - p + 2 * q1 * p
    # geometric tail summed in closed form
    total = sp_stationary(p, q1, 0) + sp_stationary(p, q1, 1) / (1 - r)
    assert total == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("p,q1", [(0.0, 0.5), (0.5, 0.5), (0.3, 0.0), (0.3, 1.1)])
def test_sp_rejects_ranges(p, q1):
    with pytest.raises(ValidationError):
        sp_stationary(p, q1, 0)
    with pytest.raises(ValidationError):
        sp_expected_aoii_linear(p, q1, 1, 0)


def test_sp_linear_examples():
    assert sp_expected_aoii_linear(0.3, 0.7, 1, 0) == pytest.approx(0.3 / (0.58 * 0.88), rel=1e-14)
    assert sp_expected_aoii_linear(0.3, 0.7, 1, 0) == pytest.approx(0.587774, abs=1e-6)
    assert sp_expected_aoii_linear(0.2, 1.0, 3, 0.5) == pytest.approx(3 * 0.2 / 0.8 + 0.5)
    assert sp_expected_aoii_linear(0.27, 0.41, 0, 1.7) == 1.7


@given(ps, q1s, st.floats(0, 5), st.floats(0, 5))
def test_sp_capped_sum_within_tail_bound(p, q1, alpha, beta):
    val = sp_expected_aoii_linear(p, q1, alpha, beta)
    capped, tail = sp_expected_aoii(p, q1, Linear(alpha, beta), 60)
    assert capped <= val + 1e-12
    assert val - capped <= tail * (1 + 1e-9) + 1e-12


def test_sp_capped_example():
    v, tail = sp_expected_aoii(0.3, 0.7, Linear(), 500)
    assert v == pytest.approx(0.587774, abs=1e-6) and tail < 1e-12


def test_sp_constant_penalty():
    v, tail = sp_expected_aoii(0.3, 0.7, Linear(0, 2.5), 200)
    assert v == pytest.approx(2.5, abs=1e-14)
    assert tail <= 2.5 * 1e-12


def test_sp_quadratic_matches_oracle():
    src = SourceModel(0.1)
    _, _, oracle = _stationary_cost(src, Geometric(0.9), StrongPreemptive(), Quadratic(1), dmax=300)
    v, tail = sp_expected_aoii(0.1, 0.9, Quadratic(1), 300)
    assert abs(v - oracle) < 1e-9


@pytest.mark.parametrize("f", [Quadratic(2), Logarithmic(2), Table((0, 1, 4), slope=3), Linear(2, 1)])
@pytest.mark.parametrize("p,q1", [(0.45, 0.2), (0.3, 0.7), (0.05, 0.95)])
def test_sp_tail_bound_is_rigorous(f, p, q1):
    far, _ = sp_expected_aoii(p, q1, f, 3000)
    near, tail = sp_expected_aoii(p, q1, f, 10)
    # the linear bound is exact, so allow summation round-off
    assert far - near <= tail * (1 + 1e-9) + 1e-14


def test_sp_tail_needs_slope():
    with pytest.raises(ValidationError):
        sp_expected_aoii(0.3, 0.7, Table((0, 1)), 10)


# --------------------------------------------------------------------------
# weak preemption
# --------------------------------------------------------------------------


def test_wp_aggregates_uniform_two():
    agg = wp_aggregates(SourceModel(0.2), Zipf(0, 2))
    assert agg.big_pi == pytest.approx(0.4 / 2.2, rel=1e-13)
    assert agg.big_pi_t[0] == pytest.approx(0.4 * 0.4 / 2.2, rel=1e-13)
    assert agg.pi0 == pytest.approx(0.745455, abs=1e-6)


@given(ps, st.one_of(st.builds(Zipf, st.floats(0, 5), st.integers(2, 9)), st.integers(1, 6).map(Deterministic)))
def test_wp_aggregates_normalised(p, d):
    assert wp_aggregates(SourceModel(p), d).total == pytest.approx(1.0, abs=1e-12)


def test_wp_aggregates_match_grouped_oracle():
    src, d = SourceModel(0.3), Zipf(1, 5)
    mdp, pi, _ = _stationary_cost(src, d, WeakPreemptive())
    pos = mdp.deltas > 0
    # AoII > 0 with nothing informative in flight: idle or carrying a stale copy
    pi0 = pi[~pos].sum()
    big_pi = pi[pos & (mdp.iis != 1)].sum()
    per_t = [pi[pos & (mdp.iis == 1) & (mdp.ts == t)].sum() for t in range(1, 5)]
    agg = wp_aggregates(src, d)
    assert abs(agg.pi0 - pi0) < 1e-8
    assert abs(agg.big_pi - big_pi) < 1e-8
    assert np.max(np.abs(np.array(agg.big_pi_t) - per_t)) < 1e-8


def test_wp_linear_uniform_two_matches_oracle():
    src, d = SourceModel(0.2), Zipf(0, 2)
    _, _, oracle = _stationary_cost(src, d, WeakPreemptive())
    assert abs(wp_expected_aoii_linear(src, d, 1, 0) - oracle) < 1e-8


def test_wp_linear_constant_penalty():
    assert wp_expected_aoii_linear(SourceModel(0.3), Zipf(1, 4), 0, 1.25) == 1.25


def test_wp_unit_delay_is_strong():
    for p in (0.1, 0.3, 0.45):
        assert wp_expected_aoii_linear(SourceModel(p), Deterministic(1), 2, 0.5) == pytest.approx(
            sp_expected_aoii_linear(p, 1.0, 2, 0.5), rel=1e-13
        )


@pytest.mark.parametrize("d", [Explicit((0.2, 0.5, 0.3)), Deterministic(3), Zipf(2, 7)])
def test_wp_linear_general_bounded(d):
    src = SourceModel(0.25)
    _, _, oracle = _stationary_cost(src, d, WeakPreemptive())
    assert abs(wp_expected_aoii_linear(src, d, 1, 0) - oracle) / oracle < 1e-8


def test_wp_pmf_weighted_variant_disagrees_with_oracle():
    # substituting PMF values for the hazards in the first-moment recursion is off by several percent
    src, d = SourceModel(0.3), Zipf(0, 2)
    _, _, oracle = _stationary_cost(src, d, WeakPreemptive())
    variant = wp_expected_aoii_linear(src, d, 1, 0, pmf_weights=True)
    assert abs(variant - oracle) / oracle > 0.05
    assert abs(wp_expected_aoii_linear(src, d, 1, 0) - oracle) / oracle < 1e-10


def test_wp_rejects_unbounded():
    with pytest.raises(ValidationError):
        wp_aggregates(SourceModel(0.3), Geometric(0.5))
    with pytest.raises(ValidationError):
        wp_expected_aoii_linear(SourceModel(0.3), Geometric(0.5), 1, 0)


# --------------------------------------------------------------------------
# threshold preemption and the optimality condition
# --------------------------------------------------------------------------


def test_tp_example():
    assert tp_expected_aoii_linear(0.3, 0.7, 1, 0) == pytest.approx(0.587774, abs=1e-6)


@given(ps, q1s, st.floats(0, 10), st.floats(0, 10))
def test_tp_identical_to_sp(p, q1, alpha, beta):
    assert tp_expected_aoii_linear(p, q1, alpha, beta) == sp_expected_aoii_linear(p, q1, alpha, beta)


@pytest.mark.slow
def test_tp_matches_simulation():
    src, d = SourceModel(0.35), Zipf(3, 5)
    res = simulate(src, d, Linear(), ThresholdPreemptive(5), SimConfig(10**6, 10**4, 99))
    val = tp_expected_aoii_linear(0.35, d.hazard(1), 1, 0)
    assert abs(res.avg_penalty - val) < 3 * res.std_error


@pytest.mark.parametrize("t_max", [3, 5, 8])
def test_tp_formula_matches_stationary_cost(t_max):
    src, d = SourceModel(0.3), Zipf(3, t_max)
    _, _, oracle = _stationary_cost(src, d, ThresholdPreemptive(t_max))
    assert abs(tp_expected_aoii_linear(0.3, d.hazard(1), 1, 0) - oracle) < 1e-10


def test_tp_at_tmax_two_is_weak_preemption():
    src, d = SourceModel(0.3), Zipf(1, 2)
    _, _, oracle = _stationary_cost(src, d, ThresholdPreemptive(2))
    assert abs(optimal_expected_aoii_linear(src, d, 1, 0) - oracle) < 1e-10
    assert abs(tp_expected_aoii_linear(0.3, d.hazard(1), 1, 0) - oracle) > 1e-3


def test_optimal_closed_form_dispatch():
    assert optimal_expected_aoii_linear(SourceModel(0.3), Geometric(0.7), 1, 0) == sp_expected_aoii_linear(0.3, 0.7, 1, 0)


def test_sigma_increment():
    assert sigma_increment(0.3, 0.7, 2.0) == pytest.approx(2.0 / (0.7 + 0.3 - 0.42))


@pytest.mark.parametrize("t_max", range(3, 12))
@pytest.mark.parametrize("p", [round(0.05 * k, 2) for k in range(1, 10)])
def test_condition_fails_at_a1(t_max, p):
    assert not check_condition1(SourceModel(p), Zipf(1, t_max)).satisfied


@pytest.mark.parametrize("t_max", range(3, 12))
@pytest.mark.parametrize("p", [round(0.05 * k, 2) for k in range(1, 10)])
def test_condition_holds_at_a3(t_max, p):
    assert check_condition1(SourceModel(p), Zipf(3, t_max)).satisfied


def test_condition_mixed_at_a225():
    sat = {check_condition1(SourceModel(round(0.05 * k, 2)), Zipf(2.25, t)).satisfied
           for t in range(3, 12) for k in range(1, 10)}
    assert sat == {True, False}


@given(ps, st.floats(0, 6))
def test_condition_always_holds_at_tmax_two(p, a):
    rep = check_condition1(SourceModel(p), Zipf(a, 2))
    assert rep.satisfied and rep.hazard_monotone


@given(ps, st.floats(0, 6), st.integers(3, 12))
def test_condition_report_invariant(p, a, t_max):
    r = check_condition1(SourceModel(p), Zipf(a, t_max))
    assert r.satisfied == (r.hazard_monotone and r.Q1 >= 0 and r.Q2 >= 0 and r.Q3 >= 0)
    d = Zipf(a, t_max)
    assert r.q1 == d.hazard(1) and r.q_last == d.hazard(t_max - 1)


def test_condition_rejects_unbounded():
    with pytest.raises(ValidationError):
        check_condition1(SourceModel(0.3), Geometric(0.5))


@given(ps, st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_q2_simplified_matches_unsimplified(p, q1, ql):
    # first line of the derivation: coefficient of delta with sigma / alpha = 1 / (q1 + p - 2 q1 p)
    sigma = 1.0 / (q1 + p - 2 * q1 * p)
    unsimplified = ((1 - q1) * (2 * p - 1) - p * p * (1 - ql)) * sigma + (1 - ql) * (1 - p)
    _, q2, _ = condition_q_values(p, q1, ql)
    assert q2 == pytest.approx(unsimplified, rel=1e-9, abs=1e-12)
