"""Right-continuous piecewise-constant loss curves and tables of them.

A :class:`StepLoss` is described by strictly increasing breakpoints
``b_0 < ... < b_{m-1}`` and ``m + 1`` segment values: ``values[0]`` holds on
``[domain_min, b_0)``, ``values[j]`` on ``[b_{j-1}, b_j)`` and ``values[m]`` on
``[b_{m-1}, inf)``.

A :class:`LossTable` stores its rows in flat (CSR-like) arrays so the
calibration routines can work on tens of thousands of rows without touching
Python objects per row.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

_EPS = np.finfo(float).eps


class DomainError(ValueError):
    """Evaluation below the left end of a loss curve's domain."""


class TableError(ValueError):
    """Malformed loss curve or table."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


class StepLoss:
    """One sample's loss as a right-continuous step function of the threshold."""

    __slots__ = ("breakpoints", "values", "domain_min", "meta")

    def __init__(
        self,
        breakpoints: Sequence[float],
        values: Sequence[float],
        domain_min: float = -math.inf,
        meta: Mapping[str, str] | None = None,
    ):
        bp = _frozen(breakpoints)
        vals = _frozen(values)
        if vals.size != bp.size + 1:
            raise TableError(
                f"expected {bp.size + 1} segment values for {bp.size} breakpoints, got {vals.size}"
            )
        if not np.all(np.isfinite(bp)):
            raise TableError("breakpoints must be finite")
        if bp.size > 1 and not np.all(bp[1:] > bp[:-1]):
            raise TableError("breakpoints must be strictly increasing")
        if np.isnan(vals).any() or np.isinf(vals).any():
            raise TableError("loss values must be finite")
        domain_min = float(domain_min)
        if math.isnan(domain_min) or domain_min == math.inf:
            raise TableError("domain_min must be -inf or finite")
        if bp.size and domain_min > bp[0]:
            raise TableError("domain_min lies above the first breakpoint")
        self.breakpoints = bp
        self.values = vals
        self.domain_min = domain_min
        self.meta = dict(meta or {})

    def __call__(self, lam: float) -> float:
        return eval_loss(self, lam)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StepLoss):
            return NotImplemented
        return (
            self.domain_min == other.domain_min
            and np.array_equal(self.breakpoints, other.breakpoints)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.domain_min, self.breakpoints.tobytes(), self.values.tobytes()))

    def __repr__(self) -> str:
        return (
            f"StepLoss(breakpoints={self.breakpoints.tolist()}, "
            f"values={self.values.tolist()}, domain_min={self.domain_min})"
        )

    @property
    def is_monotone(self) -> bool:
        """True when the curve is non-increasing in the threshold."""
        return bool(np.all(self.values[1:] <= self.values[:-1]))

    def canonical(self) -> StepLoss:
        """Drop breakpoints across which the value does not change."""
        keep = self.values[1:] != self.values[:-1]
        vals = np.concatenate([self.values[:1], self.values[1:][keep]])
        return StepLoss(self.breakpoints[keep], vals, self.domain_min, self.meta)

    def monotonized(self) -> StepLoss:
        """``lam -> sup_{t >= lam} L(t)``, canonicalized."""
        vals = np.maximum.accumulate(self.values[::-1])[::-1]
        return StepLoss(self.breakpoints, vals, self.domain_min, self.meta).canonical()


def eval_loss(loss: StepLoss, lam: float) -> float:
    """Value of ``loss`` at ``lam`` (right-continuous at breakpoints)."""
    if lam < loss.domain_min:
        raise DomainError(f"lambda={lam} is below domain_min={loss.domain_min}")
    return float(loss.values[np.searchsorted(loss.breakpoints, lam, side="right")])


class RiskCurve:
    """Summed loss ``S(lam) = sum_i L_i(lam)`` of a table as a step function.

    ``sums[j]`` is the float sum on segment ``j`` of the merged breakpoints
    (``sums[0]`` to the left of every breakpoint). ``error_bound`` bounds the
    absolute rounding error of every entry of ``sums``; :meth:`exact_sum`
    recomputes one segment with rational arithmetic.
    """

    def __init__(self, table: LossTable):
        self.table = table
        bp, vals, ptr = table._bp, table._vals, table._ptr
        n = table.n
        vptr = ptr + np.arange(n + 1)
        starts = vals[vptr[:-1]]
        # delta at a breakpoint = value after it minus value before it
        not_first = np.ones(vals.size, dtype=bool)
        not_first[vptr[:-1]] = False
        not_last = np.ones(vals.size, dtype=bool)
        not_last[vptr[1:] - 1] = False
        deltas = vals[not_first] - vals[not_last]

        order = np.argsort(bp, kind="stable")
        sbp = bp[order]
        sdel = deltas[order]
        if sbp.size:
            first = np.concatenate([[True], sbp[1:] != sbp[:-1]])
            self.breakpoints = sbp[first]
            grouped = np.add.reduceat(sdel, np.flatnonzero(first))
        else:
            self.breakpoints = sbp
            grouped = sdel
        self.jumps = grouped
        self.collisions = int(sbp.size - self.breakpoints.size)
        s0 = float(np.sum(starts))
        self.sums = np.concatenate([[s0], s0 + np.cumsum(grouped)])
        terms = n + sbp.size + 2
        self.error_bound = 2.0 * terms * _EPS * (
            float(np.sum(np.abs(starts))) + float(np.sum(np.abs(deltas)))
        )

    def __len__(self) -> int:
        return self.sums.size

    def segment_lambda(self, j: int) -> float:
        """Left end of segment ``j`` (``domain_min`` for segment 0)."""
        return self.table.domain_min if j == 0 else float(self.breakpoints[j - 1])

    def exact_sum(self, j: int) -> Fraction:
        if j == 0:
            vals = self.table._vals[self.table._ptr[:-1] + np.arange(self.table.n)]
        else:
            vals = self.table.values_at(float(self.breakpoints[j - 1]))
        distinct, counts = np.unique(vals, return_counts=True)
        return sum(
            (Fraction(v) * c for v, c in zip(distinct.tolist(), counts.tolist())), Fraction(0)
        )


class LossTable:
    """``n`` step losses sharing a domain and an upper bound ``bound``."""

    def __init__(
        self,
        rows: Iterable[StepLoss],
        bound: float = 1.0,
        *,
        sizes: Iterable[StepLoss] | None = None,
        lower_bound: float | None = None,
    ):
        rows = list(rows)
        if not rows:
            raise TableError("a loss table needs at least one row")
        dmins = {r.domain_min for r in rows}
        if len(dmins) != 1:
            raise TableError("rows must share domain_min")
        lens = np.array([r.breakpoints.size for r in rows])
        ptr = np.concatenate([[0], np.cumsum(lens)])
        bp = np.concatenate([r.breakpoints for r in rows])
        vals = np.concatenate([r.values for r in rows])
        size_rows = None if sizes is None else list(sizes)
        self._init_flat(bp, vals, ptr, bound, dmins.pop(), size_rows, lower_bound)
        self._rows = tuple(rows)

    @classmethod
    def from_flat(
        cls,
        breakpoints: np.ndarray,
        values: np.ndarray,
        ptr: np.ndarray,
        bound: float = 1.0,
        domain_min: float = -math.inf,
        *,
        sizes: list[StepLoss] | None = None,
        lower_bound: float | None = None,
        check: bool = True,
    ) -> LossTable:
        """Build from concatenated breakpoints and values.

        Row ``i`` owns ``breakpoints[ptr[i]:ptr[i+1]]`` and
        ``values[ptr[i] + i : ptr[i+1] + i + 1]``.
        """
        self = cls.__new__(cls)
        self._init_flat(
            np.asarray(breakpoints, dtype=float),
            np.asarray(values, dtype=float),
            np.asarray(ptr, dtype=np.int64),
            bound,
            domain_min,
            sizes,
            lower_bound,
            check=check,
        )
        self._rows = None
        return self

    @classmethod
    def from_grid(
        cls,
        grid: Sequence[float],
        matrix,
        bound: float = 1.0,
        domain_min: float | None = None,
        **kwargs,
    ) -> LossTable:
        """Rows on a shared breakpoint grid.

        ``matrix`` has shape ``(n, len(grid) + 1)``; column 0 holds below
        ``grid[0]``. ``domain_min`` defaults to ``-inf``.
        """
        grid = np.asarray(grid, dtype=float).reshape(-1)
        mat = np.atleast_2d(np.asarray(matrix, dtype=float))
        n, width = mat.shape
        if width != grid.size + 1:
            raise TableError(f"matrix has {width} columns, expected {grid.size + 1}")
        if grid.size > 1 and not np.all(grid[1:] > grid[:-1]):
            raise TableError("grid must be strictly increasing")
        ptr = np.arange(n + 1, dtype=np.int64) * grid.size
        dmin = -math.inf if domain_min is None else domain_min
        return cls.from_flat(np.tile(grid, n), mat.reshape(-1), ptr, bound, dmin, **kwargs)

    def _init_flat(self, bp, vals, ptr, bound, domain_min, sizes, lower_bound, check=True):
        n = ptr.size - 1
        if n < 1:
            raise TableError("a loss table needs at least one row")
        bound = float(bound)
        if not math.isfinite(bound):
            raise TableError("bound B must be finite")
        if vals.size != bp.size + n:
            raise TableError("values/breakpoints length mismatch")
        if check:
            if not np.all(np.isfinite(bp)) or not np.all(np.isfinite(vals)):
                raise TableError("breakpoints and values must be finite")
            inner = np.ones(bp.size, dtype=bool)
            starts = ptr[:-1]
            inner[starts[starts < bp.size]] = False
            if bp.size > 1:
                bad = (bp[1:] <= bp[:-1]) & inner[1:]
                if bad.any():
                    row = int(np.searchsorted(ptr, np.flatnonzero(bad)[0] + 1, side="right") - 1)
                    raise TableError("breakpoints must be strictly increasing", row)
            over = vals > bound
            if over.any():
                flat = int(np.flatnonzero(over)[0])
                row = int(np.searchsorted(ptr + np.arange(n + 1), flat, side="right") - 1)
                raise TableError(f"loss value {vals[flat]!r} exceeds bound B={bound!r}", row)
            if domain_min > -math.inf and bp.size:
                firsts = bp[ptr[:-1][ptr[1:] > ptr[:-1]]]
                if (firsts < domain_min).any():
                    raise TableError("a breakpoint lies below domain_min")
        for a in (bp, vals, ptr):
            a.setflags(write=False)
        self._bp, self._vals, self._ptr = bp, vals, ptr
        self.n = n
        self.bound = bound
        self.domain_min = float(domain_min)
        self.lower_bound = lower_bound
        if sizes is not None and len(sizes) != n:
            raise TableError(f"size table has {len(sizes)} rows, loss table has {n}")
        self.sizes = None if sizes is None else tuple(sizes)
        self._curve = None
        self._row_id = np.repeat(np.arange(n), np.diff(ptr))

        vptr = ptr + np.arange(n + 1)
        self._vptr = vptr
        not_first = np.ones(vals.size, dtype=bool)
        not_first[vptr[:-1]] = False
        not_last = np.ones(vals.size, dtype=bool)
        not_last[vptr[1:] - 1] = False
        self.monotone = bool(np.all(vals[not_first] <= vals[not_last]))

    # -- row access -------------------------------------------------------

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> StepLoss:
        return self.rows[i]

    def __iter__(self):
        return iter(self.rows)

    @property
    def rows(self) -> tuple[StepLoss, ...]:
        if self._rows is None:
            p, v = self._ptr, self._vptr
            self._rows = tuple(
                StepLoss(self._bp[p[i] : p[i + 1]], self._vals[v[i] : v[i + 1]], self.domain_min)
                for i in range(self.n)
            )
        return self._rows

    @property
    def monotone_flag(self) -> bool:
        return self.monotone

    def __eq__(self, other) -> bool:
        if not isinstance(other, LossTable):
            return NotImplemented
        return (
            self.n == other.n
            and self.bound == other.bound
            and self.domain_min == other.domain_min
            and np.array_equal(self._ptr, other._ptr)
            and np.array_equal(self._bp, other._bp)
            and np.array_equal(self._vals, other._vals)
            and (self.sizes is None) == (other.sizes is None)
            and (self.sizes is None or self.sizes == other.sizes)
        )

    def __repr__(self) -> str:
        return (
            f"LossTable(n={self.n}, bound={self.bound}, domain_min={self.domain_min}, "
            f"monotone={self.monotone})"
        )

    def take(self, indices) -> LossTable:
        """Sub-table with the given rows, in the given order."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        lens = np.diff(self._ptr)[idx]
        new_ptr = np.concatenate([[0], np.cumsum(lens)])
        flat_bp = np.repeat(self._ptr[idx] - new_ptr[:-1], lens) + np.arange(new_ptr[-1])
        vlens = lens + 1
        new_vptr = np.concatenate([[0], np.cumsum(vlens)])
        flat_v = np.repeat(self._vptr[idx] - new_vptr[:-1], vlens) + np.arange(new_vptr[-1])
        sizes = None if self.sizes is None else [self.sizes[i] for i in idx]
        return LossTable.from_flat(
            self._bp[flat_bp],
            self._vals[flat_v],
            new_ptr,
            self.bound,
            self.domain_min,
            sizes=sizes,
            lower_bound=self.lower_bound,
            check=False,
        )

    def values_at(self, lam: float, rows=None) -> np.ndarray:
        """Per-row loss values at ``lam`` (optionally only for ``rows``)."""
        if lam < self.domain_min:
            raise DomainError(f"lambda={lam} is below domain_min={self.domain_min}")
        counts = np.bincount(self._row_id[self._bp <= lam], minlength=self.n)
        vals = self._vals[self._vptr[:-1] + counts]
        return vals if rows is None else vals[np.asarray(rows)]

    def risk_curve(self) -> RiskCurve:
        if self._curve is None:
            self._curve = RiskCurve(self)
        return self._curve

    def canonical(self) -> LossTable:
        """Merge adjacent equal segments in every row (and every size row)."""
        vals, vptr = self._vals, self._vptr
        not_first = np.ones(vals.size, dtype=bool)
        not_first[vptr[:-1]] = False
        not_last = np.ones(vals.size, dtype=bool)
        not_last[vptr[1:] - 1] = False
        keep_bp = vals[not_first] != vals[not_last]
        keep_v = not_first.copy()
        keep_v[not_first] = keep_bp
        keep_v[vptr[:-1]] = True
        row_id = np.repeat(np.arange(self.n), np.diff(self._ptr))
        lens = np.bincount(row_id[keep_bp], minlength=self.n)
        ptr = np.concatenate([[0], np.cumsum(lens)])
        return LossTable.from_flat(
            self._bp[keep_bp],
            vals[keep_v],
            ptr,
            self.bound,
            self.domain_min,
            sizes=None if self.sizes is None else [r.canonical() for r in self.sizes],
            lower_bound=self.lower_bound,
            check=False,
        )


def empirical_risk(table: LossTable, lam: float) -> float:
    """Mean loss of the table's rows at ``lam``."""
    return math.fsum(table.values_at(lam).tolist()) / table.n


def merged_breakpoints(table: LossTable) -> np.ndarray:
    """Sorted, de-duplicated union of every row's breakpoints."""
    return np.unique(table._bp)


def monotonize_losses(table: LossTable) -> LossTable:
    """Replace each row by its running maximum from the right."""
    if table.monotone:
        return table.canonical()
    rows = [row.monotonized() for row in table.rows]
    return LossTable(
        rows,
        table.bound,
        sizes=None if table.sizes is None else list(table.sizes),
        lower_bound=table.lower_bound,
    )


def jump_bound_diagnostic(table: LossTable) -> float:
    """Largest downward jump of the empirical risk over all breakpoints.

    The jump at ``lam`` is the left limit of the mean loss minus its value at
    ``lam``; points of continuity contribute zero, so the result is never
    negative.
    """
    curve = table.risk_curve()
    if curve.jumps.size == 0:
        return 0.0
    return max(0.0, float(np.max(-curve.jumps)) / table.n)
