"""Quantile-clipped SGD: optimizer, private variant, bounds and verification."""

__version__ = "0.1.0"

from .analysis import (
    BoundInputs,
    BoundTerms,
    dp_qc_sgd_bound,
    dp_qc_sgd_constant_bound,
    fixed_clipping_bound,
    one_step_descent_check,
    qc_sgd_bound,
    qc_sgd_constant_bound,
    stationarity_measure,
)
from .clipping import ClipConfig, bias_upper_bound, estimate_threshold, tau_upper_bound
from .core import QuantileSchedule, StepSchedule, balanced_schedules, schedule_exponents
from .optimizer import DivergenceError, OptimizerConfig, RunTrace, run_qc_sgd
from .privacy import DPConfig, run_dp_qc_sgd, sigma_dp
from .problems import QuadraticProblem, TwoPointExample

__all__ = [
    "BoundInputs", "BoundTerms", "ClipConfig", "DPConfig", "DivergenceError",
    "OptimizerConfig", "QuadraticProblem", "QuantileSchedule", "RunTrace",
    "StepSchedule", "TwoPointExample", "balanced_schedules", "bias_upper_bound",
    "dp_qc_sgd_bound", "dp_qc_sgd_constant_bound", "estimate_threshold",
    "fixed_clipping_bound", "one_step_descent_check", "qc_sgd_bound",
    "qc_sgd_constant_bound", "run_dp_qc_sgd", "run_qc_sgd", "schedule_exponents",
    "sigma_dp", "stationarity_measure", "tau_upper_bound",
]
