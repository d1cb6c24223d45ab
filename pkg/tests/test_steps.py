import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conformal_risk.steps import (
    DomainError,
    LossTable,
    StepLoss,
    TableError,
    empirical_risk,
    eval_loss,
    jump_bound_diagnostic,
    merged_breakpoints,
    monotonize_losses,
)


def step(bp, vals, dmin=-math.inf):
    return StepLoss(bp, vals, domain_min=dmin)


class TestEvalLoss:
    def test_right_continuous_at_breakpoint(self):
        assert eval_loss(step([0.5], [1, 0]), 0.5) == 0

    def test_left_segment(self):
        assert eval_loss(step([0.5], [1, 0]), 0.49) == 1

    def test_right_segment(self):
        assert eval_loss(step([0.5], [1, 0]), 0.9) == 0

    def test_below_domain(self):
        with pytest.raises(DomainError):
            eval_loss(step([0.5], [1, 0], dmin=0.0), -0.1)

    def test_at_domain_min(self):
        assert step([0.5], [1, 0], dmin=0.0)(0.0) == 1


class TestStepLossValidation:
    def test_value_count(self):
        with pytest.raises(TableError):
            StepLoss([0.1, 0.2], [1, 0])

    def test_strictly_increasing(self):
        with pytest.raises(TableError):
            StepLoss([0.2, 0.2], [1, 0.5, 0])

    def test_nonfinite_breakpoint(self):
        with pytest.raises(TableError):
            StepLoss([math.inf], [1, 0])

    def test_domain_above_breakpoint(self):
        with pytest.raises(TableError):
            StepLoss([0.1], [1, 0], domain_min=0.5)

    def test_canonical_merges_equal_segments(self):
        s = StepLoss([0.1, 0.2, 0.3], [1, 1, 0.5, 0.5]).canonical()
        assert s.breakpoints.tolist() == [0.2]
        assert s.values.tolist() == [1, 0.5]

    def test_immutable(self):
        s = StepLoss([0.1], [1, 0])
        with pytest.raises(ValueError):
            s.values[0] = 3


class TestEmpiricalRisk:
    def test_zero_row(self):
        t = LossTable([step([], [0])])
        assert empirical_risk(t, -5.0) == 0
        assert empirical_risk(t, 123.0) == 0

    def test_two_rows(self):
        t = LossTable([step([0.3], [1, 0]), step([0.7], [1, 0])])
        assert empirical_risk(t, 0.5) == 0.5

    def test_identical_rows(self):
        row = step([0.2, 0.6], [0.9, 0.4, 0.1])
        t = LossTable([row] * 7)
        for lam in (0.0, 0.2, 0.5, 0.6, 1.0):
            assert empirical_risk(t, lam) == pytest.approx(row(lam), abs=1e-15)

    def test_empty_table(self):
        with pytest.raises(TableError):
            LossTable([])


class TestMergedBreakpoints:
    def test_union(self):
        t = LossTable([step([0.3], [1, 0]), step([0.7], [1, 0])])
        assert merged_breakpoints(t).tolist() == [0.3, 0.7]

    def test_dedup(self):
        t = LossTable([step([0.3], [1, 0]), step([0.3], [1, 0])])
        assert merged_breakpoints(t).tolist() == [0.3]

    def test_single_row(self):
        t = LossTable([step([0.1, 0.4, 0.9], [1, 0.6, 0.3, 0])])
        assert merged_breakpoints(t).tolist() == [0.1, 0.4, 0.9]


class TestLossTable:
    def test_monotone_flag_verified(self):
        assert LossTable([step([0.5], [1, 0])]).monotone_flag
        assert not LossTable([step([0.5], [0, 1])]).monotone_flag

    def test_bound_enforced(self):
        with pytest.raises(TableError):
            LossTable([step([0.5], [1.5, 0])], bound=1.0)

    def test_negative_losses_allowed(self):
        t = LossTable([step([0.5], [0.5, -2.0])], bound=1.0)
        assert empirical_risk(t, 1.0) == -2.0

    def test_shared_domain(self):
        with pytest.raises(TableError):
            LossTable([step([0.5], [1, 0], dmin=0.0), step([0.5], [1, 0])])

    def test_flat_matches_rows(self):
        rows = [step([0.1, 0.5], [1, 0.5, 0]), step([], [0.25]), step([0.3], [0.75, 0.5])]
        a = LossTable(rows)
        b = LossTable.from_flat([0.1, 0.5, 0.3], [1, 0.5, 0, 0.25, 0.75, 0.5], [0, 2, 2, 3])
        assert a == b
        assert b.rows == tuple(rows)

    def test_from_grid(self):
        t = LossTable.from_grid([0.0, 0.5], [[1, 0.5, 0], [1, 1, 0]])
        assert t[0](0.25) == 0.5 and t[1](0.25) == 1 and t[1](0.5) == 0

    def test_take(self):
        rows = [step([0.1 * (i + 1)], [1, 0]) for i in range(5)]
        t = LossTable(rows).take([4, 0])
        assert t.rows == (rows[4], rows[0])

    def test_values_at(self):
        t = LossTable([step([0.3], [1, 0]), step([0.7], [1, 0])])
        assert t.values_at(0.5).tolist() == [0, 1]


class TestMonotonize:
    def test_monotone_unchanged(self):
        t = LossTable([step([0.2, 0.4], [1, 0.5, 0])])
        assert monotonize_losses(t) == t

    def test_running_max(self):
        t = LossTable([step([0.1, 0.2], [0.2, 0.5, 0.1])])
        m = monotonize_losses(t)
        assert m[0].values.tolist() == [0.5, 0.1]
        assert m[0].breakpoints.tolist() == [0.2]
        assert m.monotone_flag

    def test_constant(self):
        t = LossTable([step([], [0.3])])
        assert monotonize_losses(t) == t


rows_strategy = st.lists(
    st.tuples(
        st.lists(st.sampled_from([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]), unique=True, max_size=5).map(sorted),
        st.lists(st.sampled_from([-0.5, 0.0, 0.25, 0.5, 1.0]), min_size=6, max_size=6),
    ).map(lambda bv: StepLoss(bv[0], bv[1][: len(bv[0]) + 1])),
    min_size=1,
    max_size=6,
)


@settings(max_examples=200, deadline=None)
@given(rows_strategy)
def test_monotonize_properties(rows):
    t = LossTable(rows)
    m = monotonize_losses(t)
    assert monotonize_losses(m) == m
    assert m.monotone_flag
    probes = [0.0, 0.1, 0.15, 0.2, 0.3, 0.35, 0.4, 0.5, 0.6, 0.7]
    for lam in probes:
        assert np.all(m.values_at(lam) >= t.values_at(lam))
    pointwise_equal = all(np.array_equal(m.values_at(x), t.values_at(x)) for x in probes)
    assert pointwise_equal == t.monotone


class TestJump:
    def test_single_row(self):
        assert jump_bound_diagnostic(LossTable([step([0.5], [1, 0])])) == 1.0

    def test_two_rows_distinct(self):
        t = LossTable([step([0.3], [1, 0]), step([0.7], [1, 0])])
        assert jump_bound_diagnostic(t) == 0.5

    def test_constant(self):
        assert jump_bound_diagnostic(LossTable([step([], [0.4]), step([], [0.2])])) == 0.0

    def test_shared_breakpoint_adds_up(self):
        t = LossTable([step([0.3], [1, 0]), step([0.3], [1, 0])])
        assert jump_bound_diagnostic(t) == 1.0

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 10**6), st.floats(0.5, 4.0))
    def test_disjoint_breakpoints_bounded(self, n, seed, bound):
        rng = np.random.default_rng(seed)
        pts = rng.permutation(np.arange(1, 4 * n + 1) / (4 * n + 1))
        rows = []
        for i in range(n):
            bp = np.sort(pts[3 * i : 3 * i + rng.integers(0, 4)])
            vals = np.sort(rng.uniform(0, bound, bp.size + 1))[::-1]
            vals[0] = bound if rng.random() < 0.5 else vals[0]
            rows.append(StepLoss(bp, vals))
        t = LossTable(rows, bound=bound)
        assert t.risk_curve().collisions == 0
        assert jump_bound_diagnostic(t) <= bound / n
