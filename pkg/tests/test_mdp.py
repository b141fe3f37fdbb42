import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aoii.mdp import (
    IDLE0,
    State,
    TruncationConfig,
    build_truncated,
    check_state,
    enumerate_states,
    is_valid_state,
    reachable_states,
    row_sums,
    transitions,
    write_kernel_csv,
)
from aoii.model import Deterministic, Explicit, Geometric, Linear, Quadratic, SourceModel, ValidationError, Zipf
from aoii.policies import StrongPreemptive, ThresholdPreemptive

delays = st.one_of(
    st.builds(Geometric, st.floats(0.2, 0.95)),
    st.builds(Zipf, st.floats(0, 5), st.integers(2, 6)),
    st.integers(1, 4).map(Deterministic),
)
sources = st.floats(0.01, 0.49).map(SourceModel)


def _as_dict(rows):
    return {s: w for s, w in rows}


def _enumerated_oracle(p, q, delta, t, i, a):
    """Case-by-case kernel written out per (delivery, flip) branch."""
    x = delta > 0
    out = {}

    def add(s, w):
        if w > 0:
            out[s] = out.get(s, 0) + w

    if a == 0 and i == -1:
        add(State(delta + 1 if x else 0, 0, -1), 1 - p)
        add(State(0 if x else 1, 0, -1), p)
        return out
    j = int(x) if a == 1 else i
    age = 1 if a == 1 else t + 1
    for flip, wf in ((False, 1 - p), (True, p)):
        src_now = x != flip
        # delivered: estimate takes the update's value (relative to the old estimate)
        add(State(0 if src_now == bool(j) else delta + 1, 0, -1), q * wf)
        add(State(0 if not src_now else delta + 1, age, j), (1 - q) * wf)
    return out


def test_state_validity():
    assert is_valid_state((0, 0, -1)) and is_valid_state((3, 2, 1))
    for bad in [(0, 0, 0), (0, 1, -1), (-1, 0, -1), (0, 1, 2)]:
        assert not is_valid_state(bad)
        with pytest.raises(ValueError):
            check_state(bad)


def test_transition_example_fresh_from_matched_idle():
    src, d = SourceModel(0.3), Geometric(0.7)
    got = _as_dict(transitions(src, d, IDLE0, 1))
    want = {State(0, 0, -1): 0.49, State(1, 0, -1): 0.21, State(0, 1, 0): 0.21, State(1, 1, 0): 0.09}
    assert got.keys() == want.keys()
    for s in want:
        assert got[s] == pytest.approx(want[s], abs=1e-15)


@pytest.mark.parametrize("delta", [1, 2, 17])
@pytest.mark.parametrize("p", [0.05, 0.3, 0.45])
def test_transition_idle_wait(delta, p):
    got = _as_dict(transitions(SourceModel(p), Zipf(1, 4), State(delta, 0, -1), 0))
    assert got == {State(delta + 1, 0, -1): pytest.approx(1 - p), State(0, 0, -1): pytest.approx(p)}


def test_transition_unit_delay_collapses():
    got = _as_dict(transitions(SourceModel(0.3), Deterministic(1), IDLE0, 1))
    assert got == {State(0, 0, -1): pytest.approx(0.7), State(1, 0, -1): pytest.approx(0.3)}


def test_transition_rejects_invalid():
    with pytest.raises(ValueError):
        transitions(SourceModel(0.3), Geometric(0.5), (0, 1, -1), 1)
    with pytest.raises(ValueError):
        transitions(SourceModel(0.3), Geometric(0.5), IDLE0, 2)


@given(sources, delays, st.integers(0, 6), st.integers(0, 4), st.sampled_from([0, 1]), st.sampled_from([0, 1]))
def test_transitions_match_enumerated_oracle(src, d, delta, t, i_bit, a):
    i = -1 if t == 0 else i_bit
    q = d.hazard(1) if a == 1 else d.hazard(t + 1)
    got = _as_dict(transitions(src, d, State(delta, t, i), a))
    want = _enumerated_oracle(src.p, q, delta, t, i, a)
    assert got.keys() == want.keys()
    for s in want:
        assert got[s] == pytest.approx(want[s], abs=1e-15)
    assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)


def test_truncated_boundary_example():
    mdp = build_truncated(SourceModel(0.3), Geometric(0.7), Linear(), TruncationConfig(20))
    k = mdp.index((20, 0, -1))
    assert _as_dict(mdp.row(k, 0)) == {State(20, 0, -1): pytest.approx(0.7), State(0, 0, -1): pytest.approx(0.3)}


def test_state_count():
    mdp = build_truncated(SourceModel(0.3), Geometric(0.3), Linear(), TruncationConfig(100, 30))
    raw = 101 * 3 * 31
    invalid_per_delta = 2 + 30  # (t=0, i in {0,1}) and (t>=1, i=-1)
    assert mdp.n_states == raw - 101 * invalid_per_delta


def test_index_layout():
    mdp = build_truncated(SourceModel(0.3), Zipf(1, 5), Linear(), TruncationConfig(7))
    T = mdp.t_max
    for k, s in enumerate(mdp.states()):
        assert mdp.index(s) == k
        d, t, i = s
        assert k == d * (2 * T + 1) + (0 if t == 0 else 2 * t - 1 + i)
    with pytest.raises(IndexError):
        mdp.index((8, 0, -1))


def test_truncation_defaults():
    assert TruncationConfig().resolve(Zipf(3, 5)).t_max == 4
    assert TruncationConfig().resolve(Geometric(0.7)).t_max == 18
    assert TruncationConfig().resolve(Deterministic(1)).t_max == 1
    with pytest.raises(ValidationError):
        TruncationConfig(100, 2).resolve(Zipf(3, 5))
    with pytest.raises(ValidationError):
        TruncationConfig(0).resolve(Zipf(3, 5))


@given(sources, delays, st.integers(2, 12))
def test_rows_stochastic(src, d, dmax):
    mdp = build_truncated(src, d, Quadratic(1), TruncationConfig(dmax))
    for m, sums in zip(mdp.kernels, row_sums(mdp)):
        assert np.all(m.data >= 0)
        assert np.max(np.abs(sums - 1)) < 1e-12


@given(sources, delays)
def test_delta_step_structure(src, d):
    mdp = build_truncated(src, d, Linear(), TruncationConfig(6))
    for k in range(mdp.n_states):
        s = mdp.state(k)
        for a in (0, 1):
            for s2, _ in mdp.row(k, a):
                assert s2.delta in (0, min(s.delta + 1, mdp.delta_max))


@given(sources, delays)
def test_truncated_rows_equal_exact_rows_inside(src, d):
    mdp = build_truncated(src, d, Linear(), TruncationConfig(6))
    for k in range(mdp.n_states):
        s = mdp.state(k)
        if s.delta >= mdp.delta_max or s.t >= mdp.t_max:
            continue
        for a in (0, 1):
            got = _as_dict(mdp.row(k, a))
            want = _as_dict(transitions(src, d, s, a))
            assert got.keys() == want.keys()
            for s2 in want:
                assert got[s2] == pytest.approx(want[s2], abs=1e-15)


@given(sources, delays)
def test_delta_homogeneity(src, d):
    mdp = build_truncated(src, d, Linear(), TruncationConfig(8))

    def profile(delta, t, i, a):
        out = {}
        for s2, w in mdp.row(mdp.index((delta, t, i)), a):
            key = ("reset" if s2.delta == 0 else "up", s2.t, s2.i)
            out[key] = w
        return out

    for t in range(0, mdp.t_max + 1):
        for i in ([-1] if t == 0 else [0, 1]):
            for a in (0, 1):
                ref = profile(1, t, i, a)
                for delta in range(2, mdp.delta_max):
                    got = profile(delta, t, i, a)
                    assert got.keys() == ref.keys()
                    for key in ref:
                        assert got[key] == pytest.approx(ref[key], abs=1e-15)


def test_costs_are_penalty():
    mdp = build_truncated(SourceModel(0.3), Zipf(1, 3), Quadratic(2), TruncationConfig(5))
    assert np.array_equal(mdp.costs, 2.0 * mdp.deltas.astype(float) ** 2)


def test_reachable_strong_excludes_virtual_states():
    mdp = build_truncated(SourceModel(0.3), Zipf(1, 5), Linear(), TruncationConfig(30))
    reach = {mdp.state(k) for k in reachable_states(mdp, StrongPreemptive(), IDLE0)}
    assert all(State(d, 1, 0) not in reach for d in range(2, 31))
    assert State(1, 1, 1) not in reach
    assert State(2, 1, 1) in reach and State(1, 1, 0) in reach


def test_reachable_threshold_stays_at_age_one():
    mdp = build_truncated(SourceModel(0.3), Zipf(3, 5), Linear(), TruncationConfig(30))
    reach = {mdp.state(k) for k in reachable_states(mdp, ThresholdPreemptive(5), IDLE0)}
    assert reach and all(s.t <= 1 for s in reach)


def test_kernel_csv(tmp_path):
    mdp = build_truncated(SourceModel(0.3), Deterministic(1), Linear(), TruncationConfig(2))
    path = tmp_path / "k.csv"
    write_kernel_csv(mdp, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "delta,t,i,a,delta_next,t_next,i_next,prob"
    assert len(lines) - 1 == sum(m.nnz for m in mdp.kernels)


def test_enumerate_states_shapes():
    d, t, i = enumerate_states(3, 2)
    assert len(d) == len(t) == len(i) == 4 * 5
    assert all(is_valid_state(s) for s in zip(d, t, i))
