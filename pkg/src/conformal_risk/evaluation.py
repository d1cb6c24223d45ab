"""Repeated random calibration/test splits of a fixed loss table."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibrate import InfeasibleError, RiskSpec
from .simulation import CALIBRATORS, TrialSummary, map_trials, run_calibrator, summarize, trial_rng
from .steps import LossTable


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitEvalConfig:
    n_cal: int
    trials: int
    alpha: float
    bound: float = 1.0
    seed: int = 0
    calibrator: str = "standard"
    workers: int = 1
    bins: int = 20

    def validate(self, table: LossTable) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not 1 <= self.n_cal < table.n:
            raise ConfigError(f"n_cal={self.n_cal} must lie in [1, {table.n - 1}] for {table.n} rows")
        if self.calibrator not in CALIBRATORS:
            raise ConfigError(f"unknown calibrator {self.calibrator!r}")
        if self.calibrator == "standard" and not table.monotone:
            raise ConfigError(
                "table is not monotone; pass a monotonized calibrator or monotonize the losses"
            )
        RiskSpec(self.alpha, self.bound)


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    lambda_hat: float
    risk: float
    set_size: float | None


def _mean(x: np.ndarray) -> float:
    return math.fsum(x.tolist()) / x.size


def run_split(table: LossTable, config: SplitEvalConfig, trial: int) -> TrialRecord:
    """One random split: calibrate on ``n_cal`` rows, average the rest at the threshold."""
    rng = trial_rng(config.seed, trial)
    perm = rng.permutation(table.n)
    cal, test = perm[: config.n_cal], perm[config.n_cal :]
    spec = RiskSpec(config.alpha, config.bound)
    try:
        res = run_calibrator(config.calibrator, table.take(cal), spec)
    except InfeasibleError as e:
        raise InfeasibleError(f"trial {trial}: {e}", e.min_risk, trial=trial) from e
    lam = res.deploy_lambda
    risk = _mean(table.values_at(lam, rows=test))
    size = None
    if table.sizes is not None:
        size = _mean(np.array([table.sizes[i](lam) for i in test]))
    return TrialRecord(trial, res.lambda_hat, risk, size)


def split_evaluate(table: LossTable, config: SplitEvalConfig) -> tuple[TrialSummary, list[TrialRecord]]:
    config.validate(table)
    records = map_trials(lambda i: run_split(table, config, i), config.trials, config.workers)
    summary = summarize([r.risk for r in records], config.seed, config.bins)
    return summary, records


def _fmt(x: float) -> str:
    return repr(x) if math.isfinite(x) else ("-inf" if x < 0 else "inf")


def build_report(table: LossTable, config: SplitEvalConfig, summary: TrialSummary, records) -> dict:
    lams = np.array([r.lambda_hat for r in records])
    finite = lams[np.isfinite(lams)]
    lam_summary = {"sentinel_count": int(lams.size - finite.size)}
    if finite.size:
        lam_summary.update(
            mean=float(np.mean(finite)),
            std=float(np.std(finite, ddof=1)) if finite.size > 1 else 0.0,
            min=float(np.min(finite)),
            max=float(np.max(finite)),
            quantiles={
                str(q): float(np.quantile(finite, q)) for q in (0.05, 0.25, 0.5, 0.75, 0.95)
            },
        )
    n = config.n_cal
    report = {
        "alpha": config.alpha,
        "B": config.bound,
        "n_cal": n,
        "n_test": table.n - n,
        "n_rows": table.n,
        "trials": config.trials,
        "seed": config.seed,
        "calibrator": config.calibrator,
        "lambda_hat": lam_summary,
        "mean_risk": summary.mean_risk,
        "std_dev": summary.std_dev,
        "std_error": summary.std_error,
        "reference_band": {
            "lower": config.alpha - 2 * config.bound / (n + 1),
            "upper": config.alpha,
            "rule": "alpha - 2B/(n_cal+1) <= E[risk] <= alpha",
        },
        "histogram": {"edges": list(summary.hist_edges), "counts": list(summary.hist_counts)},
    }
    if records and records[0].set_size is not None:
        sizes = np.array([r.set_size for r in records])
        report["mean_set_size"] = float(np.mean(sizes))
        report["std_set_size"] = float(np.std(sizes, ddof=1)) if sizes.size > 1 else 0.0
    return report


def write_report(out_dir, table, config, summary, records) -> dict:
    """Write ``report.json``, ``risk_hist.csv`` and ``trials.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(table, config, summary, records)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")

    with open(out / "risk_hist.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        e, c = summary.hist_edges, summary.hist_counts
        for i in range(len(c)):
            w.writerow([repr(e[i]), repr(e[i + 1]), c[i]])

    with open(out / "trials.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "lambda_hat", "risk", "set_size"])
        for r in records:
            size = "" if r.set_size is None else repr(r.set_size)
            w.writerow([r.trial, _fmt(r.lambda_hat), repr(r.risk), size])
    return report
