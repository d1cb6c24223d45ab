"""Threshold selection for monotone (and monotonized) loss tables.

Every procedure compares a step-function statistic against ``alpha`` on each
segment of the merged breakpoints. Comparisons are exact on the stored float
values: a vectorized float pass settles every segment whose margin exceeds
the proven rounding bound, and the rest are recomputed with
:class:`fractions.Fraction`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .steps import LossTable, RiskCurve, TableError, empirical_risk

_EPS = np.finfo(float).eps

PASS, FAIL, UNSURE = 1, 0, -1


class CalibrationError(ValueError):
    pass


class InfeasibleError(CalibrationError):
    """The risk condition fails at every threshold.

    ``min_risk`` is the smallest value the constrained statistic reaches,
    which is larger than ``alpha``.
    """

    def __init__(self, message: str, min_risk: float, trial: int | None = None):
        super().__init__(message)
        self.min_risk = min_risk
        self.trial = trial


class NonMonotoneError(CalibrationError):
    pass


@dataclass(frozen=True)
class RiskSpec:
    """Target risk level ``alpha`` for losses bounded above by ``bound``."""

    alpha: float
    bound: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.bound)):
            raise ValueError("alpha and bound must be finite")
        if not self.alpha < self.bound:
            raise ValueError(f"alpha={self.alpha} must be below the loss bound B={self.bound}")


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of a calibration run.

    ``lambda_hat`` is ``-inf`` when the condition holds on the whole domain;
    ``deploy_lambda`` is then the table's ``domain_min``. ``breakpoint_index``
    indexes :func:`merged_breakpoints` and is ``None`` for the sentinel.
    ``criterion`` is the statistic that was compared against ``alpha``.
    """

    lambda_hat: float
    deploy_lambda: float
    empirical_risk: float
    inflated_risk: float
    criterion: float
    breakpoint_index: int | None
    n: int
    alpha: float
    bound: float
    procedure: str

    @property
    def is_sentinel(self) -> bool:
        return self.lambda_hat == -math.inf

    def to_dict(self) -> dict:
        lam = "-inf" if self.is_sentinel else self.lambda_hat
        dep = "-inf" if self.deploy_lambda == -math.inf else self.deploy_lambda
        return {
            "lambda_hat": lam,
            "deploy_lambda": dep,
            "empirical_risk": self.empirical_risk,
            "inflated_risk": self.inflated_risk,
            "criterion": self.criterion,
            "breakpoint_index": self.breakpoint_index,
            "n": self.n,
            "alpha": self.alpha,
            "B": self.bound,
            "procedure": self.procedure,
        }


class _Threshold:
    """``S <= c`` on the segments of a risk curve, decided exactly."""

    def __init__(self, curve: RiskCurve, c_exact: Fraction):
        self.curve = curve
        self.c_exact = c_exact
        self.c_float = float(c_exact)
        self.tol = curve.error_bound + 4 * _EPS * abs(self.c_float) + 1e-300
        self._cache: dict[int, bool] = {}

    def classify(self) -> np.ndarray:
        s = self.curve.sums
        out = np.full(s.size, UNSURE, dtype=np.int8)
        out[s <= self.c_float - self.tol] = PASS
        out[s > self.c_float + self.tol] = FAIL
        return out

    def holds(self, j: int, label: int | None = None) -> bool:
        if label is None:
            s = self.curve.sums[j]
            if s <= self.c_float - self.tol:
                return True
            if s > self.c_float + self.tol:
                return False
        elif label != UNSURE:
            return label == PASS
        if j not in self._cache:
            self._cache[j] = self.curve.exact_sum(j) <= self.c_exact
        return self._cache[j]


def _check_inputs(table: LossTable, spec: RiskSpec) -> None:
    if float(np.max(table._vals)) > spec.bound:
        raise TableError(f"table holds losses above B={spec.bound}")


def _result(table, spec, curve, j, criterion, procedure) -> CalibrationResult:
    n = table.n
    if j == 0:
        lam, idx, deploy = -math.inf, None, table.domain_min
    else:
        lam = float(curve.breakpoints[j - 1])
        idx, deploy = j - 1, lam
    risk = empirical_risk(table, deploy)
    inflated = (n * risk + spec.bound) / (n + 1)
    return CalibrationResult(
        lambda_hat=lam,
        deploy_lambda=deploy,
        empirical_risk=risk,
        inflated_risk=inflated,
        criterion=criterion,
        breakpoint_index=idx,
        n=n,
        alpha=spec.alpha,
        bound=spec.bound,
        procedure=procedure,
    )


def calibrate(
    table: LossTable,
    spec: RiskSpec,
    *,
    method: str = "bisect",
    allow_nonmonotone: bool = False,
) -> CalibrationResult:
    """Smallest threshold with ``n/(n+1) * R_n(lam) + B/(n+1) <= alpha``.

    Parameters
    ----------
    table : LossTable
        Calibration losses; must be non-increasing unless
        ``allow_nonmonotone`` is set.
    spec : RiskSpec
    method : {"bisect", "scan"}
        Search strategy over the merged breakpoints. Both return the same
        threshold on monotone tables.
    allow_nonmonotone : bool
        Run the raw procedure on a non-monotone table (first segment where
        the condition holds). This is the unsafe procedure that the
        monotonized variants exist to replace; it is kept for simulation.

    Raises
    ------
    NonMonotoneError
        Non-monotone table without ``allow_nonmonotone``.
    InfeasibleError
        The condition holds nowhere, including as ``lam -> inf``.
    """
    if method not in ("bisect", "scan"):
        raise ValueError(f"unknown search method {method!r}")
    if not table.monotone and not allow_nonmonotone:
        raise NonMonotoneError(
            "loss table is not non-increasing in lambda; use monotonize_losses() "
            "or calibrate_monotonized() first"
        )
    _check_inputs(table, spec)
    n = table.n
    curve = table.risk_curve()
    cond = _Threshold(curve, Fraction(spec.alpha) * (n + 1) - Fraction(spec.bound))
    m = len(curve)

    def infeasible():
        best = float(np.min(curve.sums) + spec.bound) / (n + 1)
        return InfeasibleError(
            f"no threshold reaches alpha={spec.alpha}: smallest inflated risk is {best!r} "
            f"(losses must get down to alpha - B/(n+1))",
            best,
        )

    if method == "bisect" and table.monotone:
        if not cond.holds(m - 1):
            raise infeasible()
        if cond.holds(0):
            j = 0
        else:
            lo, hi = 0, m - 1  # fails at lo, holds at hi
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if cond.holds(mid):
                    hi = mid
                else:
                    lo = mid
            j = hi
    else:
        labels = cond.classify()
        j = None
        for k in np.flatnonzero(labels != FAIL):
            if cond.holds(int(k), int(labels[k])):
                j = int(k)
                break
        if j is None:
            raise infeasible()

    criterion = float(curve.sums[j] + spec.bound) / (n + 1)
    return _result(table, spec, curve, j, criterion, "standard")


def calibrate_monotonized(
    table: LossTable,
    spec: RiskSpec,
    finite_sample_correction: bool = True,
) -> CalibrationResult:
    """Calibrate against the monotonized empirical risk ``sup_{t >= lam} R_n(t)``.

    Without the correction this returns ``inf{lam : sup_{t>=lam} R_n(t) <= alpha}``.
    With it, the monotonized risk is inflated exactly as in :func:`calibrate`,
    so on monotone tables both functions return the same threshold.
    """
    _check_inputs(table, spec)
    n = table.n
    curve = table.risk_curve()
    if finite_sample_correction:
        c = Fraction(spec.alpha) * (n + 1) - Fraction(spec.bound)
    else:
        c = Fraction(spec.alpha) * n
    cond = _Threshold(curve, c)
    labels = cond.classify()

    fails = np.flatnonzero(labels == FAIL)
    last_fail = int(fails[-1]) if fails.size else -1
    for k in np.flatnonzero(labels == UNSURE)[::-1]:
        if k <= last_fail:
            break
        if not cond.holds(int(k), UNSURE):
            last_fail = int(k)
            break

    suffix_max = np.maximum.accumulate(curve.sums[::-1])[::-1]

    def crit(s):
        s = float(s)
        return (s + spec.bound) / (n + 1) if finite_sample_correction else s / n

    if last_fail == len(curve) - 1:
        best = crit(curve.sums[-1])
        raise InfeasibleError(
            f"no threshold reaches alpha={spec.alpha}: monotonized criterion ends at {best!r}",
            best,
        )
    j = last_fail + 1
    procedure = "monotonized_corrected" if finite_sample_correction else "monotonized"
    return _result(table, spec, curve, j, crit(suffix_max[j]), procedure)


def conformal_rank(n: int, alpha: float) -> int:
    """``ceil((n + 1)(1 - alpha))``, computed exactly for the float ``alpha``."""
    return math.ceil((n + 1) * (1 - Fraction(alpha)))


def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    """Split-conformal threshold: the ``ceil((n+1)(1-alpha))``-th smallest score.

    Returns ``inf`` when that rank exceeds ``n`` (no finite threshold covers
    at level ``1 - alpha``) and ``-inf`` when it is below 1.
    """
    s = np.sort(np.asarray(scores, dtype=float).reshape(-1))
    if s.size == 0:
        raise ValueError("need at least one conformal score")
    if not np.all(np.isfinite(s)):
        raise ValueError("conformal scores must be finite")
    k = conformal_rank(s.size, alpha)
    if k > s.size:
        return math.inf
    if k < 1:
        return -math.inf
    return float(s[k - 1])
