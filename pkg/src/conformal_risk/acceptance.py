"""Acceptance checks, runnable from ``conformal-risk verify`` and from pytest.

Each check returns a :class:`CheckResult` and, when ``echo`` is set, prints a
single PASS/FAIL line. Statistical checks use four standard errors.
"""

from __future__ import annotations

import contextlib
import io
import math
import random
import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import oracles
from .binomial import binom_cdf
from .calibrate import InfeasibleError, RiskSpec, calibrate, conformal_quantile
from .losses import ClassTree, ScoredCandidates, ScoredClasses, f1_loss, fnr_loss, graph_distance_loss, miscoverage_loss
from .simulation import (
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
    verify_jump_lemma,
)
from .steps import LossTable

Z = 4.0


@dataclass(frozen=True)
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:>2}. {self.name}: {self.detail} ({self.seconds:.1f}s)"


# -- 1. conformal equivalence --------------------------------------------------


def _random_scores(rng: random.Random) -> list[float]:
    n = rng.randint(1, 500)
    kind = rng.random()
    if kind < 0.2:
        return [float(rng.randint(0, 9)) for _ in range(n)]  # heavy ties
    if kind < 0.3:
        return [0.5] * n
    return [rng.random() for _ in range(n)]


def indicator_table(scores) -> LossTable:
    """Rows ``1{s_i > lam}``, the same functions as :func:`miscoverage_loss` builds."""
    n = len(scores)
    return LossTable.from_flat(scores, np.tile([1.0, 0.0], n), np.arange(n + 1), 1.0)


def conformal_equivalence(cases: int = 1000, seed: int = 0) -> tuple[bool, str]:
    rng = random.Random(seed)
    alphas = [k / 100 for k in range(1, 51)]
    infinite = mismatched = 0
    for _ in range(cases):
        scores = _random_scores(rng)
        alpha = rng.choice(alphas)
        q = conformal_quantile(scores, alpha)
        table = indicator_table(scores)
        try:
            lam = calibrate(table, RiskSpec(alpha, 1.0)).lambda_hat
        except InfeasibleError:
            lam = math.inf
        if q == math.inf:
            infinite += 1
        if not (lam == q and math.copysign(1, lam) == math.copysign(1, q)):
            mismatched += 1
    return mismatched == 0, f"{cases} score sets, {mismatched} mismatches, {infinite} infinite quantiles"


def check_1(workers: int = 1) -> tuple[bool, str]:
    t0 = time.perf_counter()
    ok, detail = conformal_equivalence()
    dt = time.perf_counter() - t0
    return ok and dt < 10.0, f"{detail}; runtime {dt:.2f}s (limit 10s)"


# -- 2-4, 7, 8: Monte Carlo bands ----------------------------------------------------


def check_2(workers: int = 1) -> tuple[bool, str]:
    n, alpha = 100, 0.1
    t0 = time.perf_counter()
    s = monte_carlo_risk(MiscoverageGenerator(n), RiskSpec(alpha), 10_000, "standard", 2, workers)
    dt = time.perf_counter() - t0
    hi = alpha + Z * s.std_error
    lo = alpha - 1 / (n + 1) - Z * s.std_error
    ok = lo <= s.mean_risk <= hi and dt < 30.0
    return ok, f"mean {s.mean_risk:.5f} in [{lo:.5f}, {hi:.5f}]; runtime {dt:.1f}s (limit 30s)"


def check_3(workers: int = 1) -> tuple[bool, str]:
    params = TightnessParams(k=3, epsilon_prime=0.25, n=50)
    a = params.alpha
    s = monte_carlo_risk(TightnessGenerator(params), RiskSpec(a), 10_000, "standard", 3, workers)
    lo = a - 2 / (params.n + 1) - Z * s.std_error
    hi = a + Z * s.std_error
    return lo <= s.mean_risk <= hi, f"mean {s.mean_risk:.5f} in [{lo:.5f}, {hi:.5f}] (alpha {a:.5f})"


def check_4(workers: int = 1) -> tuple[bool, str]:
    params = TightnessParams.from_epsilon(0.5, n=100)
    a = params.alpha
    s = monte_carlo_risk(TightnessGenerator(params), RiskSpec(a), 20_000, "standard", 4, workers)
    gap = a - s.mean_risk
    need = 1.5 / 101 - Z * s.std_error
    return gap >= need, (
        f"alpha - mean = {gap:.5f}, need >= {need:.5f} "
        f"(analytic gap of this construction is (1-eps')/(n+1) = {0.75 / 101:.5f})"
    )


def check_5(workers: int = 1) -> tuple[bool, str]:
    n, p, alpha = 10, 0.95, 0.3
    grid = sufficient_grid_size(n, p, alpha)
    params = CounterexampleParams(p=p, N=grid, n=n, alpha=alpha)
    ref = closed_form_counterexample_risk(params)
    raw, _ = simulate_counterexample(params, 20_000, 5)
    close = abs(raw.mean_risk - ref) <= Z * raw.std_error
    above = raw.mean_risk > alpha

    # materialized tables at a grid small enough to build, as a cross-check of the sampler
    small = CounterexampleParams(p=0.95, N=sufficient_grid_size(10, 0.95, 0.8), n=10, alpha=0.8)
    m = monte_carlo_risk(CounterexampleGenerator(small), RiskSpec(0.8), 4000, "naive", 55, workers)
    small_ref = closed_form_counterexample_risk(small)
    cross = abs(m.mean_risk - small_ref) <= Z * m.std_error

    worst = _binomial_agreement()
    digits = worst <= 1e-12
    ok = close and above and cross and digits
    return ok, (
        f"N={grid}, MC {raw.mean_risk:.5f} vs closed form {ref:.5f} (4se {Z * raw.std_error:.5f}), "
        f"> alpha {above}; materialized N={small.N}: {m.mean_risk:.4f} vs {small_ref:.4f}; "
        f"binomial max rel err {worst:.1e}"
    )


def _binomial_agreement(seed: int = 0) -> float:
    """Largest relative error of :func:`binom_cdf` against exact sums, ``n <= 1000``."""
    rng = random.Random(seed)
    cases = [(10, 0.95, 2), (1000, 0.5, 500), (1000, 0.01, 0), (1000, 0.999, 990)]
    for _ in range(40):
        n = rng.randint(1, 1000)
        cases.append((n, rng.random(), rng.randint(0, n)))
    worst = 0.0
    for n, p, m in cases:
        exact = oracles.binom_cdf_exact(n, p, m)
        if exact == 0:
            continue
        got = binom_cdf(n, p, m)
        err = abs((got - exact) / exact)
        worst = max(worst, float(err))
    return worst


def check_6(workers: int = 1) -> tuple[bool, str]:
    n, p, alpha = 10, 0.95, 0.3
    params = CounterexampleParams(p=p, N=sufficient_grid_size(n, p, alpha), n=n, alpha=alpha)
    _, mono = simulate_counterexample(params, 20_000, 5)
    hi = alpha + Z * mono.std_error
    return mono.mean_risk <= hi, f"monotonized mean {mono.mean_risk:.5f} <= {hi:.5f}"


def check_7(workers: int = 1) -> tuple[bool, str]:
    params = TightnessParams(k=3, epsilon_prime=0.25, n=10)
    r = verify_jump_lemma(TightnessGenerator(params), 1000, 7)
    ok = r.holds and r.collisions == 0 and r.max_jump <= 0.1
    return ok, f"max jump {r.max_jump!r} <= {r.bound!r}, violations {r.violations}, collisions {r.collisions}"


def check_8(workers: int = 1) -> tuple[bool, str]:
    alpha = 0.1
    s = monte_carlo_risk(NearMonotoneGenerator(10_000), RiskSpec(alpha), 2000, "monotonized", 8, workers)
    hi = alpha + 0.01 + Z * s.std_error
    return s.mean_risk <= hi, f"mean {s.mean_risk:.5f} <= {hi:.5f}"


# -- 9. loss constructors against literal definitions ----------------------------------


def _fnr_instance(rng: random.Random):
    k = rng.randint(1, 12)
    if rng.random() < 0.4:
        scores = [rng.randint(0, 10) / 10 for _ in range(k)]
    else:
        scores = [rng.random() for _ in range(k)]
    labels = rng.sample(range(k), rng.randint(1, k))
    return scores, labels


def fnr_agreement(cases: int = 500, seed: int = 9) -> int:
    rng = random.Random(seed)
    bad = 0
    for _ in range(cases):
        scores, labels = _fnr_instance(rng)
        loss = fnr_loss(ScoredClasses(scores, labels))
        cuts = list(loss.breakpoints) + [1 - s for s in scores]
        for lam in oracles.probe_points_with_edges(cuts):
            if loss(lam) != oracles.fnr_literal(scores, labels, lam):
                bad += 1
                break
    return bad


def random_tree(rng: random.Random, max_nodes: int = 50) -> dict[int, int | None]:
    size = rng.randint(1, max_nodes)
    parents: dict[int, int | None] = {0: None}
    for v in range(1, size):
        parents[v] = rng.randrange(v)
    return parents


def graph_agreement(cases: int = 500, seed: int = 9) -> int:
    rng = random.Random(seed)
    bad = 0
    for _ in range(cases):
        parents = random_tree(rng)
        tree = ClassTree(parents)
        leaves = list(tree.leaves)
        if rng.random() < 0.3:
            probs = {v: rng.randint(0, 4) / 10 for v in leaves}
        else:
            w = [rng.random() for _ in leaves]
            tot = sum(w)
            probs = {v: x / tot for v, x in zip(leaves, w)}
        y = rng.choice(leaves)
        loss = graph_distance_loss(tree, probs, y)
        g = [oracles_subtree(parents, probs, v) for v in parents]
        # regime interiors only: the literal ">=" and the right-continuous ">" split ties differently
        literal = oracles.graph_literal_fn(parents, probs, y)
        for mu in oracles.probe_points(list(loss.breakpoints) + g):
            if loss(mu) != literal(-mu):
                bad += 1
                break
    return bad


def oracles_subtree(parents, probs, v) -> float:
    kids: dict[int, list[int]] = {u: [] for u in parents}
    for u, p in parents.items():
        if p is not None:
            kids[p].append(u)
    stack, leaves = [v], []
    while stack:
        u = stack.pop()
        if kids[u]:
            stack.extend(kids[u])
        else:
            leaves.append(u)
    return math.fsum(probs[x] for x in sorted(leaves))


_VOCAB = ["the", "a", "an", "honolulu", "hawaii", "paris", "france", "red", "blue", "big", "cat", "dog", "1961", "august"]


def _phrase(rng: random.Random) -> str:
    words = [rng.choice(_VOCAB) for _ in range(rng.randint(0, 4))]
    text = " ".join(words)
    if text and rng.random() < 0.3:
        text = text.capitalize() + rng.choice([".", ",", "!", ""])
    return text


def f1_agreement(cases: int = 500, seed: int = 9) -> int:
    rng = random.Random(seed)
    bad = 0
    for _ in range(cases):
        cands = [(_phrase(rng), rng.randint(0, 20) / 20 if rng.random() < 0.5 else rng.random())
                 for _ in range(rng.randint(1, 20))]
        gold = [_phrase(rng) for _ in range(rng.randint(1, 3))]
        loss = f1_loss(ScoredCandidates(cands, gold))
        cuts = list(loss.breakpoints) + [-s for _, s in cands]
        for mu in oracles.probe_points_with_edges(cuts):
            if loss(mu) != oracles.f1_literal(cands, gold, -mu):
                bad += 1
                break
    return bad


def check_9(workers: int = 1) -> tuple[bool, str]:
    a, b, c = fnr_agreement(), graph_agreement(), f1_agreement()
    return a == b == c == 0, f"disagreeing instances of 500: fnr {a}, graph {b}, f1 {c}"


# -- 10. CLI determinism ------------------------------------------------------------------


def _run_cli(argv) -> tuple[int, bytes]:
    from .cli import main

    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue().encode("utf-8")


def cli_determinism(workdir: Path, workers: int = 4) -> tuple[bool, str]:
    from .fileio import save_loss_table

    rng = np.random.default_rng(10)
    table = LossTable([miscoverage_loss(float(s)) for s in rng.random(400)], 1.0)
    src = workdir / "table.json"
    save_loss_table(table, src)
    outputs = {}
    for tag, w in (("serial", 1), ("serial_again", 1), ("threads", workers)):
        out = workdir / tag
        base = ["evaluate", "--input", str(src), "--n-cal", "200", "--trials", "200", "--alpha", "0.1"]
        code, text = _run_cli(base + ["--seed", "3", "--out", str(out), "--workers", str(w)])
        files = tuple((out / f).read_bytes() for f in ("report.json", "trials.csv", "risk_hist.csv"))
        sims = []
        for scen in ("miscoverage", "tightness", "near-monotone"):
            c2, t2 = _run_cli(
                ["simulate", "--scenario", scen, "--n", "30", "--trials", "300", "--seed", "3", "--workers", str(w)]
            )
            sims.append((c2, t2))
        outputs[tag] = (code, text, files, tuple(sims))
    same = outputs["serial"] == outputs["serial_again"] == outputs["threads"]
    codes_ok = outputs["serial"][0] == 0 and all(c == 0 for c, _ in outputs["serial"][3])
    return same and codes_ok, f"evaluate + 3 simulate runs byte-identical across reruns and 1 vs {workers} threads: {same}"


def check_10(workers: int = 1) -> tuple[bool, str]:
    tmp = Path(tempfile.mkdtemp(prefix="crc-verify-"))
    try:
        return cli_determinism(tmp, workers=max(workers, 4))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


CHECKS = {
    1: ("conformal equivalence", check_1),
    2: ("miscoverage risk band", check_2),
    3: ("lower-bound band (tightness generator, n=50)", check_3),
    4: ("tightness gap (k=3, eps'=0.25, n=100)", check_4),
    5: ("non-monotone counterexample vs closed form", check_5),
    6: ("monotonized rescue on the counterexample", check_6),
    7: ("empirical-risk jump bound", check_7),
    8: ("near-monotone asymptotic control", check_8),
    9: ("loss constructors vs literal definitions", check_9),
    10: ("CLI determinism", check_10),
}


def run_check(number: int, workers: int = 1, echo: bool = False) -> CheckResult:
    name, fn = CHECKS[number]
    t0 = time.perf_counter()
    passed, detail = fn(workers)
    res = CheckResult(number, name, bool(passed), detail, time.perf_counter() - t0)
    if echo:
        print(res.line(), flush=True)
    return res


def run_checks(only=None, workers: int = 1, echo: bool = False) -> list[CheckResult]:
    numbers = sorted(only) if only else sorted(CHECKS)
    return [run_check(k, workers, echo) for k in numbers]
