"""Command-line entry point: ``conformal-risk <command> ...``.

Exit codes: 0 success, 1 infeasible calibration (or a failed ``verify``),
2 bad input or configuration. Errors go to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from .calibrate import (
    CalibrationError,
    InfeasibleError,
    RiskSpec,
    calibrate,
    calibrate_monotonized,
    conformal_quantile,
)
from .evaluation import ConfigError, SplitEvalConfig, split_evaluate, write_report
from .fileio import TableFormatError, load_loss_table, load_scores
from .simulation import (
    CALIBRATORS,
    CounterexampleGenerator,
    CounterexampleParams,
    MiscoverageGenerator,
    NearMonotoneGenerator,
    TightnessGenerator,
    TightnessParams,
    closed_form_counterexample_risk,
    monte_carlo_risk,
    simulate_counterexample,
    sufficient_grid_size,
)
from .steps import DomainError, TableError

# Above this many loss cells the counterexample uses the column sampler.
MATERIALIZE_LIMIT = 2_000_000


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _json_num(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "-inf" if x < 0 else "inf"
    return x


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="conformal-risk", description="Conformal risk control calibration toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", help="threshold for one loss table")
    c.add_argument("--input", required=True)
    c.add_argument("--format", choices=("csv", "json"))
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--B", type=float, dest="bound", help="loss bound (default: from file, else 1)")
    c.add_argument("--monotonize", action="store_true", help="calibrate on the monotonized risk")
    c.add_argument("--correction", action="store_true", help="add B/(n+1) to the monotonized risk")

    e = sub.add_parser("evaluate", help="repeated random calibration/test splits")
    e.add_argument("--input", required=True)
    e.add_argument("--format", choices=("csv", "json"))
    e.add_argument("--n-cal", type=int, required=True)
    e.add_argument("--trials", type=int, required=True)
    e.add_argument("--alpha", type=float, required=True)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--B", type=float, dest="bound")
    e.add_argument("--calibrator", choices=CALIBRATORS, default="standard")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--bins", type=int, default=20)

    s = sub.add_parser("simulate", help="Monte Carlo on a synthetic scenario")
    s.add_argument(
        "--scenario", required=True, choices=("tightness", "counterexample", "miscoverage", "near-monotone")
    )
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--alpha", type=float, help="target level (tightness derives it from k and eps')")
    s.add_argument("--calibrator", choices=CALIBRATORS)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--eps-prime", type=float, default=0.25)
    s.add_argument("--p", type=float, default=0.95)
    s.add_argument("--N", type=int, dest="grid", help="grid size (default: smallest sufficient)")
    s.add_argument(
        "--method",
        choices=("auto", "columns", "materialize"),
        default="auto",
        help="counterexample sampler: column waiting times or full tables",
    )

    q = sub.add_parser("quantile", help="split-conformal quantile of a score file")
    q.add_argument("--scores", required=True)
    q.add_argument("--alpha", type=float, required=True)

    v = sub.add_parser("verify", help="run the acceptance checks")
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--only", type=int, action="append", help="run only these criteria (repeatable)")
    return p


def _cmd_calibrate(a) -> int:
    table = load_loss_table(a.input, a.format, a.bound)
    spec = RiskSpec(a.alpha, table.bound)
    if a.monotonize:
        res = calibrate_monotonized(table, spec, finite_sample_correction=a.correction)
    else:
        if a.correction:
            raise ConfigError("--correction only applies with --monotonize")
        res = calibrate(table, spec)
    out = res.to_dict()
    out["monotone"] = table.monotone
    _emit(out)
    return 0


def _cmd_evaluate(a) -> int:
    table = load_loss_table(a.input, a.format, a.bound)
    cfg = SplitEvalConfig(
        n_cal=a.n_cal,
        trials=a.trials,
        alpha=a.alpha,
        bound=table.bound,
        seed=a.seed,
        calibrator=a.calibrator,
        workers=a.workers,
        bins=a.bins,
    )
    summary, records = split_evaluate(table, cfg)
    report = write_report(a.out, table, cfg, summary, records)
    _emit({k: report[k] for k in ("alpha", "B", "n_cal", "trials", "mean_risk", "std_dev", "std_error")})
    return 0


def _summary_block(summary, alpha):
    d = summary.to_dict()
    d.pop("histogram")
    d["mean_exceeds_alpha"] = summary.mean_risk > alpha
    return d


def simulate_report(a) -> dict:
    """Run one ``simulate`` invocation and return the printed object."""
    n, bound = a.n, 1.0
    out: dict = {"scenario": a.scenario, "n": n, "trials": a.trials, "seed": a.seed}
    if a.scenario == "counterexample":
        alpha = 0.3 if a.alpha is None else a.alpha
        grid = a.grid or sufficient_grid_size(n, a.p, alpha)
        params = CounterexampleParams(p=a.p, N=grid, n=n, alpha=alpha)
        method = a.method
        if method == "auto":
            method = "materialize" if grid * (n + 1) <= MATERIALIZE_LIMIT else "columns"
        out.update(alpha=alpha, p=a.p, N=grid, method=method)
        out["references"] = {
            "alpha": alpha,
            "closed_form_risk": closed_form_counterexample_risk(params),
            "column_feasible_prob": params.column_feasible_prob,
        }
        if method == "columns":
            if a.calibrator not in (None, "naive", "monotonized_corrected"):
                raise ConfigError("the column sampler covers the naive and monotonized_corrected calibrators")
            raw, mono = simulate_counterexample(params, a.trials, a.seed)
            out["naive"] = _summary_block(raw, alpha)
            out["monotonized_corrected"] = _summary_block(mono, alpha)
        else:
            gen = CounterexampleGenerator(params)
            spec = RiskSpec(alpha, bound)
            names = [a.calibrator] if a.calibrator else ["naive", "monotonized_corrected"]
            for name in names:
                s = monte_carlo_risk(gen, spec, a.trials, name, a.seed, a.workers)
                out[name] = _summary_block(s, alpha)
        return out

    if a.scenario == "tightness":
        params = TightnessParams(k=a.k, epsilon_prime=a.eps_prime, n=n)
        if a.alpha is not None and a.alpha != params.alpha:
            raise ConfigError(f"tightness fixes alpha=(k+1-eps')/(n+1)={params.alpha!r}")
        alpha = params.alpha
        gen = TightnessGenerator(params)
        refs = {
            "alpha": alpha,
            "lower_band": alpha - 2 * bound / (n + 1),
            "gap_lower_bound": params.gap_lower_bound,
            "k": a.k,
            "eps_prime": a.eps_prime,
        }
        default = "standard"
    elif a.scenario == "miscoverage":
        alpha = 0.1 if a.alpha is None else a.alpha
        gen = MiscoverageGenerator(n)
        refs = {
            "alpha": alpha,
            "lower_band": alpha - 2 * bound / (n + 1),
            "conformal_lower_band": alpha - 1 / (n + 1),
        }
        default = "standard"
    else:
        alpha = 0.1 if a.alpha is None else a.alpha
        gen = NearMonotoneGenerator(n)
        refs = {"alpha": alpha, "asymptotic_slack": 0.01}
        default = "monotonized"
    name = a.calibrator or default
    summary = monte_carlo_risk(gen, RiskSpec(alpha, bound), a.trials, name, a.seed, a.workers)
    out.update(alpha=alpha, calibrator=name, references=refs)
    out["summary"] = summary.to_dict()
    return out


def _cmd_simulate(a) -> int:
    _emit(simulate_report(a))
    return 0


def _cmd_quantile(a) -> int:
    scores = load_scores(a.scores)
    if not scores:
        raise ConfigError("score file holds no scores")
    q = conformal_quantile(scores, a.alpha)
    sys.stdout.write(json.dumps(_json_num(q)) + "\n")
    return 0


def _cmd_verify(a) -> int:
    from .acceptance import run_checks

    results = run_checks(only=a.only, workers=a.workers, echo=True)
    return 0 if all(r.passed for r in results) else 1


_COMMANDS = {
    "calibrate": _cmd_calibrate,
    "evaluate": _cmd_evaluate,
    "simulate": _cmd_simulate,
    "quantile": _cmd_quantile,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except InfeasibleError as e:
        return _fail("infeasible", str(e), 1, min_risk=e.min_risk, trial=e.trial)
    except TableFormatError as e:
        return _fail("parse", str(e), 2, line=e.line)
    except (ConfigError, CalibrationError, TableError, DomainError, ValueError) as e:
        return _fail("config", str(e), 2)
    except OSError as e:
        return _fail("io", str(e), 2)


if __name__ == "__main__":
    sys.exit(main())
