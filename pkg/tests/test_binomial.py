import math
import random

import pytest
from scipy import stats

from conformal_risk.binomial import binom_cdf, binom_logcdf
from conformal_risk.oracles import binom_cdf_exact, binom_cdf_exact_all


def rel(a, b):
    return abs(a - b) / abs(b)


@pytest.mark.parametrize(
    "n,p,m,expected",
    [
        (10, 0.95, 2, 1.6050781250000112e-09),
        (1000, 0.5, 500, 0.5126125090891804),
    ],
)
def test_frozen_values(n, p, m, expected):
    assert float(binom_cdf_exact(n, p, m)) == expected
    assert rel(binom_cdf(n, p, m), expected) < 1e-12


def test_agrees_with_exact_sum_to_twelve_digits():
    rng = random.Random(0)
    for _ in range(60):
        n = rng.randint(1, 1000)
        p = rng.random()
        exact = binom_cdf_exact_all(n, p)
        for m in {0, n // 3, n // 2, n - 1, rng.randint(0, n)}:
            e = exact[m]
            if e > 0:
                assert rel(binom_cdf(n, p, m), e) < 1e-12


def test_edges():
    assert binom_cdf(10, 0.3, -1) == 0.0
    assert binom_cdf(10, 0.3, 10) == 1.0
    assert binom_cdf(10, 0.0, 0) == 1.0
    assert binom_cdf(10, 1.0, 9) == 0.0
    with pytest.raises(ValueError):
        binom_cdf(10, 1.5, 3)


def test_deep_tail_in_log_space():
    lg = binom_logcdf(5000, 0.99, 10)
    assert math.isfinite(lg) and lg < -700
    exact = binom_cdf_exact(5000, 0.99, 10)
    assert lg == pytest.approx(math.log(exact.numerator) - math.log(exact.denominator), rel=1e-12)


def test_large_n_uses_lgamma_branch():
    assert binom_cdf(50_000, 0.5, 25_000) == pytest.approx(stats.binom.cdf(25_000, 50_000, 0.5), rel=1e-10)
