"""Conformal risk control: calibrate a threshold so the expected loss on a new sample stays below a target."""

from .binomial import binom_cdf, binom_logcdf
from .calibrate import (
    CalibrationError,
    CalibrationResult,
    InfeasibleError,
    NonMonotoneError,
    RiskSpec,
    calibrate,
    calibrate_monotonized,
    conformal_quantile,
    conformal_rank,
)
from .evaluation import ConfigError, SplitEvalConfig, split_evaluate, write_report
from .fileio import TableFormatError, load_loss_table, load_scores, save_loss_table
from .losses import (
    ClassTree,
    ScoredCandidates,
    ScoredClasses,
    f1_loss,
    fnr_loss,
    graph_distance_loss,
    miscoverage_loss,
    token_f1,
)
from .simulation import (
    CounterexampleParams,
    TightnessParams,
    TrialSummary,
    closed_form_counterexample_risk,
    gen_counterexample_losses,
    gen_tightness_losses,
    monte_carlo_risk,
    simulate_counterexample,
    verify_jump_lemma,
)
from .steps import (
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

__version__ = "0.1.0"
