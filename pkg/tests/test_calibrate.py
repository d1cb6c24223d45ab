import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conformal_risk import oracles
from conformal_risk.acceptance import conformal_equivalence, indicator_table
from conformal_risk.calibrate import (
    InfeasibleError,
    NonMonotoneError,
    RiskSpec,
    calibrate,
    calibrate_monotonized,
    conformal_quantile,
    conformal_rank,
)
from conformal_risk.losses import miscoverage_loss
from conformal_risk.steps import LossTable, StepLoss, merged_breakpoints, monotonize_losses


def table(rows, bound=1.0):
    return LossTable([StepLoss(b, v) for b, v in rows], bound)


class TestRiskSpec:
    def test_alpha_below_bound(self):
        with pytest.raises(ValueError):
            RiskSpec(1.0, 1.0)

    def test_negative_alpha_ok(self):
        assert RiskSpec(-0.5, 1.0).alpha == -0.5


class TestCalibrateExamples:
    def test_global_feasibility_sentinel(self):
        res = calibrate(table([([], [0.0])]), RiskSpec(0.6, 1.0))
        assert res.lambda_hat == -math.inf
        assert res.is_sentinel
        assert res.inflated_risk == 0.5
        assert res.to_dict()["lambda_hat"] == "-inf"

    def test_three_indicators(self):
        t = LossTable([miscoverage_loss(s) for s in (0.2, 0.5, 0.8)])
        res = calibrate(t, RiskSpec(0.5, 1.0))
        assert res.lambda_hat == 0.5
        assert res.inflated_risk == 0.5
        assert res.empirical_risk == pytest.approx(1 / 3)

    def test_infeasible(self):
        with pytest.raises(InfeasibleError) as e:
            calibrate(table([([0.5], [1.0, 0.0])]), RiskSpec(0.1, 1.0))
        assert e.value.min_risk == 0.5

    def test_nonmonotone_rejected(self):
        with pytest.raises(NonMonotoneError, match="monotonize"):
            calibrate(table([([0.5], [0.0, 1.0])]), RiskSpec(0.6, 1.0))

    def test_equality_counts_as_feasible(self):
        # (2/3) * 0.5 + 1/3 = 2/3 exactly at alpha = 2/3 in float terms
        t = table([([0.5], [1.0, 0.0]), ([0.7], [1.0, 0.0])])
        res = calibrate(t, RiskSpec(0.5, 1.0))
        assert res.lambda_hat == 0.7

    def test_deploy_lambda_uses_domain_min(self):
        t = LossTable([StepLoss([0.5], [0.0, 0.0], domain_min=0.0)])
        res = calibrate(t, RiskSpec(0.6, 1.0))
        assert res.lambda_hat == -math.inf and res.deploy_lambda == 0.0

    def test_bound_enters_formula(self):
        t = table([([0.5], [2.0, 0.0])] * 3, bound=2.0)
        with pytest.raises(InfeasibleError):
            calibrate(t, RiskSpec(0.4, 2.0))
        assert calibrate(t, RiskSpec(0.5, 2.0)).lambda_hat == 0.5


class TestMonotonized:
    def test_monotone_table_matches_calibrate(self):
        t = LossTable([miscoverage_loss(s) for s in (0.2, 0.5, 0.8)])
        a = calibrate(t, RiskSpec(0.5, 1.0))
        b = calibrate_monotonized(t, RiskSpec(0.5, 1.0), finite_sample_correction=True)
        assert a.lambda_hat == b.lambda_hat

    def test_hand_reverse_max(self):
        # both rows are 0, then 1, then 0: R = [0, 1, 0], sup from the right = [1, 1, 0]
        t = table([([0.3, 0.6], [0.0, 1.0, 0.0])] * 2)
        res = calibrate_monotonized(t, RiskSpec(0.5, 1.0), finite_sample_correction=False)
        assert res.lambda_hat == 0.6

    def test_sentinel_when_alpha_covers_everything(self):
        t = table([([0.3, 0.6], [0.0, 0.4, 0.0])] * 2)
        res = calibrate_monotonized(t, RiskSpec(0.4, 1.0), finite_sample_correction=False)
        assert res.is_sentinel

    def test_infeasible(self):
        t = table([([0.3], [1.0, 0.5])])
        with pytest.raises(InfeasibleError):
            calibrate_monotonized(t, RiskSpec(0.3, 1.0), finite_sample_correction=False)

    def test_equivalent_to_calibrating_monotonized_rows_without_correction(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(1, 8))
            rows = []
            for _ in range(n):
                k = int(rng.integers(0, 4))
                rows.append(StepLoss(np.sort(rng.choice(np.arange(1, 10) / 10, k, replace=False)),
                                     rng.choice([0, 0.5, 1.0], k + 1)))
            t = LossTable(rows)
            spec = RiskSpec(float(rng.choice([0.2, 0.4, 0.6, 0.8])), 1.0)
            mono = monotonize_losses(t)
            # monotonizing the mean dominates the mean of monotonized rows, so its threshold is no larger
            try:
                a = calibrate_monotonized(t, spec, finite_sample_correction=True).lambda_hat
            except InfeasibleError:
                a = math.inf
            try:
                b = calibrate(mono, spec).lambda_hat
            except InfeasibleError:
                b = math.inf
            assert a <= b


class TestQuantile:
    def test_middle(self):
        assert conformal_quantile([1, 2, 3], 0.5) == 2

    def test_single(self):
        assert conformal_quantile([7], 0.6) == 7

    def test_too_small_alpha(self):
        assert conformal_quantile([1, 2, 3], 0.01) == math.inf

    def test_rank_exact(self):
        # (n + 1)(1 - alpha) lands on an integer only with exact arithmetic here
        assert conformal_rank(9, 0.1) == 9
        assert conformal_rank(19, 0.05) == 19

    def test_empty(self):
        with pytest.raises(ValueError):
            conformal_quantile([], 0.1)

    def test_equivalence_small(self):
        ok, detail = conformal_equivalence(cases=200, seed=11)
        assert ok, detail

    def test_infeasible_matches_infinite_quantile(self):
        scores = [0.1, 0.4, 0.9]
        assert conformal_quantile(scores, 0.2) == math.inf
        with pytest.raises(InfeasibleError):
            calibrate(indicator_table(scores), RiskSpec(0.2, 1.0))

    def test_indicator_table_matches_constructor(self):
        scores = [0.3, 0.1, 0.3]
        assert indicator_table(scores) == LossTable([miscoverage_loss(s) for s in scores])


# -- random monotone tables ---------------------------------------------------------


def random_monotone_table(rng: random.Random, grid=None) -> LossTable:
    grid = grid or [i / 10 for i in range(1, 10)]
    n = rng.randint(1, 12)
    bound = rng.choice([1.0, 2.0, 0.5])
    rows = []
    for _ in range(n):
        k = rng.randint(0, 4)
        bp = sorted(rng.sample(grid, k))
        vals = sorted((rng.choice([-0.5, 0.0, 0.125, 0.25, 0.5, 1.0]) * bound for _ in range(k + 1)), reverse=True)
        rows.append(StepLoss(bp, vals))
    return LossTable(rows, bound)


def oracle_threshold(t: LossTable, spec: RiskSpec):
    m = merged_breakpoints(t)
    first = (m[0] - 1.0) if m.size else 0.0
    cands = [first] + m.tolist()
    idx = oracles.scan_threshold(lambda lam: t.values_at(lam).tolist(), cands, spec.alpha, spec.bound, t.n)
    if idx is None:
        return None
    return -math.inf if idx == 0 else cands[idx]


def test_scan_bisect_and_oracle_agree_on_1000_tables():
    rng = random.Random(1234)
    for _ in range(1000):
        t = random_monotone_table(rng)
        spec = RiskSpec(rng.choice([-0.2, 0.0, 0.05, 0.1, 0.3, 0.45, 0.49]) * t.bound * 2, t.bound)
        expected = oracle_threshold(t, spec)
        for method in ("bisect", "scan"):
            try:
                got = calibrate(t, spec, method=method).lambda_hat
            except InfeasibleError:
                got = None
            assert got == expected


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-0.5, 0.99))
def test_feasible_set_is_a_ray(seed, alpha):
    t = random_monotone_table(random.Random(seed))
    spec = RiskSpec(alpha * t.bound, t.bound)
    curve = t.risk_curve()
    c = (spec.alpha * (t.n + 1) - spec.bound)
    ok = curve.sums <= c
    # once feasible, always feasible (up to float rounding of sums near c)
    tol = curve.error_bound + 4 * np.finfo(float).eps * abs(c)
    firsts = np.flatnonzero(curve.sums <= c - tol)
    if firsts.size:
        assert np.all(ok[firsts[0]:] | (np.abs(curve.sums[firsts[0]:] - c) <= tol))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
def test_correction_only_raises_threshold(seed, alpha):
    rng = random.Random(seed)
    n = rng.randint(1, 10)
    rows = []
    for _ in range(n):
        k = rng.randint(0, 4)
        rows.append(StepLoss(sorted(rng.sample([0.1, 0.2, 0.3, 0.4, 0.5, 0.6], k)),
                             [rng.choice([0.0, 0.25, 0.5, 1.0]) for _ in range(k + 1)]))
    t = LossTable(rows)
    spec = RiskSpec(alpha, 1.0)
    try:
        with_corr = calibrate_monotonized(t, spec, True).lambda_hat
    except InfeasibleError:
        with_corr = math.inf
    try:
        without = calibrate_monotonized(t, spec, False).lambda_hat
    except InfeasibleError:
        assert with_corr == math.inf
        return
    assert with_corr >= without


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-0.5, 0.99))
def test_monotonized_with_correction_equals_calibrate_on_monotone(seed, alpha):
    t = random_monotone_table(random.Random(seed))
    spec = RiskSpec(alpha * t.bound, t.bound)
    try:
        a = calibrate(t, spec).lambda_hat
    except InfeasibleError:
        a = None
    try:
        b = calibrate_monotonized(t, spec, True).lambda_hat
    except InfeasibleError:
        b = None
    assert a == b


def test_exact_comparison_at_float_ties():
    # ten rows of 0.1: the float sum is 0.9999999999999999 but the exact sum is 1.0000000000000000555
    t = LossTable([StepLoss([0.5], [0.1, 0.0])] * 10)
    spec = RiskSpec(2 / 11, 1.0)
    exact_sum = sum(10 * [oracles.Fraction(0.1)])
    feasible_first = exact_sum + 1 <= oracles.Fraction(spec.alpha) * 11
    res = calibrate(t, spec)
    assert (res.lambda_hat == -math.inf) == feasible_first
