"""Synthetic loss generators and Monte Carlo estimates of the held-out risk.

A generator is any callable ``gen(rng) -> LossTable`` with an attribute ``n``;
the table it returns has ``n + 1`` rows, the last one playing the unseen test
function. Trial ``i`` of a run seeded with ``s`` draws from its own Philox
stream keyed by ``(s, i)``, so results do not depend on how trials are
scheduled across threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .binomial import binom_cdf
from .calibrate import (
    InfeasibleError,
    RiskSpec,
    calibrate,
    calibrate_monotonized,
)
from .steps import LossTable, jump_bound_diagnostic

CALIBRATORS = ("standard", "naive", "monotonized", "monotonized_corrected")


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent counter-based stream for one trial."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(trial,))))


def run_calibrator(name: str, table: LossTable, spec: RiskSpec):
    if name == "standard":
        return calibrate(table, spec)
    if name == "naive":
        return calibrate(table, spec, allow_nonmonotone=True)
    if name == "monotonized":
        return calibrate_monotonized(table, spec, finite_sample_correction=False)
    if name == "monotonized_corrected":
        return calibrate_monotonized(table, spec, finite_sample_correction=True)
    raise ValueError(f"unknown calibrator {name!r}; choose from {CALIBRATORS}")


# -- parameters ----------------------------------------------------------------


@dataclass(frozen=True)
class TightnessParams:
    k: int
    epsilon_prime: float
    n: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if not 0 < self.epsilon_prime < 1:
            raise ValueError("epsilon_prime must lie in (0, 1)")
        if not self.n > self.k + 1:
            raise ValueError("need n > k + 1")

    @classmethod
    def from_epsilon(cls, epsilon: float, n: int) -> TightnessParams:
        """``epsilon' = epsilon / 2`` and ``k = ceil(2/epsilon - 1)``."""
        return cls(k=math.ceil(2 / epsilon - 1), epsilon_prime=epsilon / 2, n=n)

    @property
    def alpha(self) -> float:
        return (self.k + 1 - self.epsilon_prime) / (self.n + 1)

    @property
    def gap_lower_bound(self) -> float:
        """Guaranteed ``alpha - E[risk]`` for this construction."""
        k, e = self.k, self.epsilon_prime
        return ((2 - e) * k + 1 - e) / ((k + 1) * (self.n + 1))


@dataclass(frozen=True)
class CounterexampleParams:
    p: float
    N: int
    n: int
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.N < 1 or self.n < 1:
            raise ValueError("N and n must be positive")
        a = Fraction(self.alpha)
        if not Fraction(1, self.n + 1) < a < 1:
            raise ValueError("alpha must lie in (1/(n+1), 1)")

    @property
    def max_feasible_count(self) -> int:
        """Largest number of unit losses ``s`` with ``(s + 1)/(n + 1) <= alpha``."""
        return math.floor(Fraction(self.alpha) * (self.n + 1)) - 1

    @property
    def column_feasible_prob(self) -> float:
        """Probability that one grid column satisfies the risk condition."""
        return binom_cdf(self.n, self.p, self.max_feasible_count)


def sufficient_grid_size(n: int, p: float, alpha: float) -> int:
    """Smallest ``N`` with ``1 - (1 - F)^N > p``, ``F`` the column-feasibility probability."""
    f = CounterexampleParams(p=p, N=1, n=n, alpha=alpha).column_feasible_prob
    if f <= 0.0:
        raise ValueError("no column can ever be feasible for these parameters")
    if f >= 1.0:
        return 1
    big_n = math.floor(math.log1p(-p) / math.log1p(-f)) + 1
    while -math.expm1(big_n * math.log1p(-f)) <= p:
        big_n += 1
    while big_n > 1 and -math.expm1((big_n - 1) * math.log1p(-f)) > p:
        big_n -= 1
    return big_n


def closed_form_counterexample_risk(params: CounterexampleParams) -> float:
    """Exact held-out risk of the raw procedure on the Bernoulli grid losses."""
    f = params.column_feasible_prob
    if f <= 0.0:
        return 0.0
    hit = -math.expm1(params.N * math.log1p(-f)) if f < 1.0 else 1.0
    return params.p * hit


# -- generators ------------------------------------------------------------------


def gen_tightness_losses(params: TightnessParams, rng: np.random.Generator) -> LossTable:
    """Rows equal to 1, then k/(k+1) from Z~U(0,1/2), then 0 from W~U(1/2,1)."""
    rows = params.n + 1
    z = rng.uniform(0.0, 0.5, size=rows)
    w = rng.uniform(0.5, 1.0, size=rows)
    bp = np.column_stack([z, w]).reshape(-1)
    mid = params.k / (params.k + 1)
    vals = np.tile([1.0, mid, 0.0], rows)
    ptr = np.arange(rows + 1) * 2
    return LossTable.from_flat(bp, vals, ptr, 1.0, 0.0, check=False)


def gen_counterexample_losses(params: CounterexampleParams, rng: np.random.Generator) -> LossTable:
    """Rows with i.i.d. Bernoulli(p) values on the grid ``j/N`` and 0 from 1 on."""
    rows, big_n = params.n + 1, params.N
    grid = np.arange(1, big_n + 1) / big_n
    bern = (rng.random((rows, big_n)) < params.p).astype(float)
    mat = np.hstack([bern, np.zeros((rows, 1))])
    return LossTable.from_grid(grid, mat, 1.0, domain_min=0.0, check=False)


def gen_miscoverage_losses(n: int, rng: np.random.Generator) -> LossTable:
    """Indicator losses ``1{s > lam}`` of i.i.d. uniform scores."""
    s = rng.random(n + 1)
    vals = np.tile([1.0, 0.0], n + 1)
    return LossTable.from_flat(s, vals, np.arange(n + 2), 1.0, check=False)


def gen_near_monotone_losses(
    n: int, rng: np.random.Generator, height: float = 0.5, width: float = 0.1
) -> LossTable:
    """Miscoverage indicator plus a bump of ``height`` on ``[V, V + width)``.

    With ``U, V ~ U(0, 1)`` each row is ``max(1{lam < U}, height * 1{V <= lam < V + width})``
    on ``lam >= 0``. Individual rows are non-monotone; the population risk
    ``1 - lam + height * lam * min(lam, width)`` on ``[0, 1]`` is decreasing.
    """
    rows = n + 1
    u = rng.random(rows)
    v = rng.random(rows)
    pts = np.sort(np.column_stack([u, v, v + width]), axis=1)
    left = np.column_stack([np.zeros(rows), pts])

    def f(lam):
        return np.maximum(
            (lam < u[:, None]).astype(float),
            height * ((v[:, None] <= lam) & (lam < v[:, None] + width)),
        )

    vals = f(left)
    ptr = np.arange(rows + 1) * 3
    return LossTable.from_flat(pts.reshape(-1), vals.reshape(-1), ptr, 1.0, 0.0, check=False)


class TightnessGenerator:
    def __init__(self, params: TightnessParams):
        self.params = params
        self.n = params.n

    def __call__(self, rng):
        return gen_tightness_losses(self.params, rng)


class CounterexampleGenerator:
    def __init__(self, params: CounterexampleParams):
        self.params = params
        self.n = params.n

    def __call__(self, rng):
        return gen_counterexample_losses(self.params, rng)


class MiscoverageGenerator:
    def __init__(self, n: int):
        self.n = n

    def __call__(self, rng):
        return gen_miscoverage_losses(self.n, rng)


class NearMonotoneGenerator:
    def __init__(self, n: int, height: float = 0.5, width: float = 0.1):
        if not 0 < height <= 1:
            raise ValueError("bump height must lie in (0, 1]")
        self.n, self.height, self.width = n, height, width

    def __call__(self, rng):
        return gen_near_monotone_losses(self.n, rng, self.height, self.width)

    def population_risk(self, lam: float) -> float:
        if lam < 0:
            return 1.0
        p_u_le = min(lam, 1.0)
        p_bump = max(0.0, min(lam, 1.0) - max(lam - self.width, 0.0))
        return (1.0 - p_u_le) + self.height * p_u_le * p_bump


class ConstantGenerator:
    """Every row identically equal to ``value``."""

    def __init__(self, n: int, value: float = 0.0):
        self.n, self.value = n, value

    def __call__(self, rng):
        return LossTable.from_flat([], [self.value] * (self.n + 1), [0] * (self.n + 2), 1.0)


# -- Monte Carlo -------------------------------------------------------------------


@dataclass(frozen=True)
class TrialSummary:
    mean_risk: float
    std_dev: float
    std_error: float
    trials: int
    hist_edges: tuple[float, ...]
    hist_counts: tuple[int, ...]
    seed: int

    def to_dict(self) -> dict:
        return {
            "mean_risk": self.mean_risk,
            "std_dev": self.std_dev,
            "std_error": self.std_error,
            "trials": self.trials,
            "seed": self.seed,
            "histogram": {"edges": list(self.hist_edges), "counts": list(self.hist_counts)},
        }


def summarize(values, seed: int, bins: int = 20) -> TrialSummary:
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("no trials to summarize")
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    counts, edges = np.histogram(x, bins=bins)
    return TrialSummary(
        mean_risk=float(np.mean(x)),
        std_dev=sd,
        std_error=sd / math.sqrt(x.size),
        trials=int(x.size),
        hist_edges=tuple(float(e) for e in edges),
        hist_counts=tuple(int(c) for c in counts),
        seed=seed,
    )


def map_trials(fn: Callable[[int], object], trials: int, workers: int = 1) -> list:
    """``[fn(0), ..., fn(trials - 1)]``, optionally on a thread pool."""
    if workers <= 1:
        return [fn(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials)))


def monte_carlo_trials(
    generator,
    spec: RiskSpec,
    trials: int,
    calibrator: str = "standard",
    master_seed: int = 0,
    workers: int = 1,
) -> np.ndarray:
    """Held-out loss at the calibrated threshold, one entry per trial."""
    if trials < 1:
        raise ValueError("need at least one trial")
    if calibrator not in CALIBRATORS:
        raise ValueError(f"unknown calibrator {calibrator!r}; choose from {CALIBRATORS}")
    n = generator.n

    def one(i):
        table = generator(trial_rng(master_seed, i))
        cal = table.take(np.arange(n))
        try:
            res = run_calibrator(calibrator, cal, spec)
        except InfeasibleError as e:
            raise InfeasibleError(f"trial {i}: {e}", e.min_risk, trial=i) from e
        return float(table.values_at(res.deploy_lambda)[n])

    return np.array(map_trials(one, trials, workers))


def monte_carlo_risk(
    generator,
    spec: RiskSpec,
    trials: int,
    calibrator: str = "standard",
    master_seed: int = 0,
    workers: int = 1,
) -> TrialSummary:
    """Estimate ``E[L_test(lambda_hat)]`` over independent draws of the generator."""
    risks = monte_carlo_trials(generator, spec, trials, calibrator, master_seed, workers)
    return summarize(risks, master_seed)


@dataclass(frozen=True)
class JumpCheck:
    max_jump: float
    bound: float
    violations: int
    collisions: int
    trials: int

    @property
    def holds(self) -> bool:
        return self.violations == 0


def verify_jump_lemma(generator, trials: int, master_seed: int = 0, bound: float = 1.0) -> JumpCheck:
    """Largest empirical-risk jump of the ``n`` calibration rows over many draws.

    Each draw is checked against ``bound / n``; breakpoints shared between
    rows (possible only through float coincidences) are counted.
    """
    n = generator.n
    limit = bound / n
    worst, bad, coll = 0.0, 0, 0
    for i in range(trials):
        cal = generator(trial_rng(master_seed, i)).take(np.arange(n))
        j = jump_bound_diagnostic(cal)
        coll += cal.risk_curve().collisions
        worst = max(worst, j)
        bad += j > limit
    return JumpCheck(max_jump=worst, bound=limit, violations=bad, collisions=coll, trials=trials)


def simulate_counterexample(
    params: CounterexampleParams, trials: int, master_seed: int = 0
) -> tuple[TrialSummary, TrialSummary]:
    """Held-out risk of the raw and corrected-monotonized procedures on the Bernoulli grid.

    Grid columns are i.i.d., and both thresholds depend on the table only
    through which columns satisfy the risk condition: the raw procedure stops
    at the first such column, the monotonized one starts after the last column
    that fails it. The column process is therefore sampled through its
    waiting times (geometric from the left and from the right) instead of
    materializing ``N`` columns, which keeps grids of ~1e9 points tractable.
    Both procedures see the same draws in every trial.
    """
    f = params.column_feasible_prob
    big_n, p = params.N, params.p
    raw = np.empty(trials)
    mono = np.empty(trials)
    for i in range(trials):
        rng = trial_rng(master_seed, i)
        first_ok = rng.geometric(f) - 1 if f > 0 else big_n  # infeasible columns before first feasible
        held_at_first = float(rng.random() < p)
        trail_ok = rng.geometric(1.0 - f) - 1 if f < 1 else big_n  # feasible columns at the right end
        held_fresh = float(rng.random() < p)
        if first_ok >= big_n:
            raw[i] = 0.0
            mono[i] = 0.0
            continue
        raw[i] = held_at_first
        after = big_n - 1 - first_ok
        if trail_ok >= after:
            mono[i] = held_at_first
        else:
            col = big_n - trail_ok
            mono[i] = 0.0 if col == big_n else held_fresh
    return summarize(raw, master_seed), summarize(mono, master_seed)
