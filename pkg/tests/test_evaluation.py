import json

import numpy as np
import pytest

from conformal_risk.calibrate import InfeasibleError
from conformal_risk.evaluation import ConfigError, SplitEvalConfig, run_split, split_evaluate, write_report
from conformal_risk.losses import miscoverage_loss
from conformal_risk.steps import LossTable, StepLoss


def uniform_indicator_table(n, seed):
    rng = np.random.default_rng(seed)
    return LossTable.from_flat(rng.random(n), np.tile([1.0, 0.0], n), np.arange(n + 1), 1.0)


def test_all_zero_rows():
    t = LossTable([StepLoss([], [0.0])] * 20)
    s, recs = split_evaluate(t, SplitEvalConfig(n_cal=10, trials=25, alpha=0.2))
    assert s.mean_risk == 0 and s.std_dev == 0
    assert all(r.lambda_hat == -np.inf for r in recs)


def test_uniform_scores_in_band():
    t = uniform_indicator_table(2000, 0)
    s, _ = split_evaluate(t, SplitEvalConfig(n_cal=1000, trials=1000, alpha=0.1, seed=1))
    assert 0.090 - 4 * s.std_error <= s.mean_risk <= 0.100 + 4 * s.std_error


def test_trials_equal_single_runs():
    t = uniform_indicator_table(300, 1)
    cfg = SplitEvalConfig(n_cal=150, trials=12, alpha=0.1, seed=4)
    _, recs = split_evaluate(t, cfg)
    for i in (0, 5, 11):
        assert run_split(t, cfg, i) == recs[i]


def test_workers_do_not_change_results():
    t = uniform_indicator_table(300, 2)
    a = split_evaluate(t, SplitEvalConfig(n_cal=150, trials=40, alpha=0.1, seed=4, workers=1))
    b = split_evaluate(t, SplitEvalConfig(n_cal=150, trials=40, alpha=0.1, seed=4, workers=3))
    assert a == b


@pytest.mark.parametrize("n_cal", [0, 20, 25])
def test_bad_n_cal(n_cal):
    t = LossTable([StepLoss([], [0.0])] * 20)
    with pytest.raises(ConfigError):
        split_evaluate(t, SplitEvalConfig(n_cal=n_cal, trials=2, alpha=0.2))


def test_nonmonotone_needs_monotonized_calibrator():
    t = LossTable([StepLoss([0.3, 0.6], [0.0, 1.0, 0.0])] * 10)
    with pytest.raises(ConfigError):
        split_evaluate(t, SplitEvalConfig(n_cal=5, trials=2, alpha=0.5))
    s, _ = split_evaluate(t, SplitEvalConfig(n_cal=5, trials=2, alpha=0.5, calibrator="monotonized"))
    assert s.mean_risk == 0


def test_infeasible_carries_trial():
    t = LossTable([miscoverage_loss(0.5)] * 10)
    with pytest.raises(InfeasibleError) as e:
        split_evaluate(t, SplitEvalConfig(n_cal=3, trials=2, alpha=0.1))
    assert e.value.trial == 0


def test_set_sizes_averaged():
    rows = [miscoverage_loss(0.1 * i) for i in range(1, 10)]
    sizes = [StepLoss([0.5], [1.0, 2.0])] * 9
    t = LossTable(rows, sizes=sizes)
    _, recs = split_evaluate(t, SplitEvalConfig(n_cal=5, trials=3, alpha=0.9))
    assert all(r.set_size in (1.0, 2.0) for r in recs)


def test_report_contents(tmp_path):
    t = uniform_indicator_table(200, 3)
    cfg = SplitEvalConfig(n_cal=100, trials=30, alpha=0.1, seed=2)
    s, recs = split_evaluate(t, cfg)
    write_report(tmp_path, t, cfg, s, recs)
    rep = json.loads((tmp_path / "report.json").read_text())
    for key in ("alpha", "B", "n_cal", "lambda_hat", "mean_risk", "std_dev", "reference_band"):
        assert key in rep
    assert rep["reference_band"]["lower"] == pytest.approx(0.1 - 2 / 101)
    assert rep["lambda_hat"]["sentinel_count"] == 0
    trials = (tmp_path / "trials.csv").read_text().splitlines()
    assert trials[0] == "trial,lambda_hat,risk,set_size" and len(trials) == 31
    hist = (tmp_path / "risk_hist.csv").read_text().splitlines()
    assert sum(int(line.split(",")[2]) for line in hist[1:]) == 30
