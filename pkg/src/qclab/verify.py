"""Built-in verification suites.

Each suite runs canonical configurations and returns a list of
:class:`Check` records; a suite passes when every check does.  Seeds and
sizes are fixed, so reports are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import analysis
from .clipping import (
    ClipConfig,
    bias_upper_bound,
    empirical_bias,
    estimate_threshold,
    tau_upper_bound,
)
from .core import QuantileSchedule, StepSchedule, balanced_schedules, rng_stream
from .optimizer import OptimizerConfig, run_many
from .privacy import DPConfig, probe_noise
from .problems import QuadraticProblem, TwoPointExample

N_SEEDS = 20
SEEDS = tuple(range(N_SEEDS))
N_SE = 4.0


@dataclass
class Check:
    name: str
    measured: float
    bound: float
    margin: float
    passed: bool
    detail: str = ""

    def as_dict(self) -> dict:
        return {k: _jsonable(v) for k, v in asdict(self).items()}

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.name}: measured={self.measured:.6g} "
                f"bound={self.bound:.6g} margin={self.margin:.6g} {self.detail}").rstrip()


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def _upper(name, measured, bound, detail="") -> Check:
    """Check ``measured <= bound``."""
    return Check(name, float(measured), float(bound), float(bound - measured),
                 bool(measured <= bound), detail)


def _lower(name, measured, bound, detail="") -> Check:
    """Check ``measured > bound``."""
    return Check(name, float(measured), float(bound), float(measured - bound),
                 bool(measured > bound), detail)


def gaussian_quadratic(dim: int, sigma: float = 1.0) -> QuadraticProblem:
    return QuadraticProblem.isotropic(dim, sigma=sigma)


# ---------------------------------------------------------------------------
# Threshold and bias bounds
# ---------------------------------------------------------------------------

THRESHOLD_PS = (0.5, 0.75, 0.9)
THRESHOLD_POINTS = 20
THRESHOLD_TAU_SLACK = 1.05


def suite_threshold_bias(seed: int = 11) -> list[Check]:
    rng = rng_stream(seed, "quantile_estimation")
    problems = {
        "quadratic_d10": gaussian_quadratic(10),
        "two_point": TwoPointExample(2.0, 0.75),
    }
    checks = []
    for label, prob in problems.items():
        sq = prob.require_sigma_q()
        worst_tau = worst_bias = math.inf
        tau_ok = bias_ok = True
        for i in range(THRESHOLD_POINTS):
            if isinstance(prob, TwoPointExample):
                x = rng.uniform(-5.0, 3.0, size=1)
            else:
                x = rng.normal(0.0, 2.0, size=prob.dim)
            gnorm = float(np.linalg.norm(prob.grad(x)))
            for p in THRESHOLD_PS:
                tau = estimate_threshold(prob, x, p, 512, rng).tau
                # slack applies to the noise part of tau_upper_bound only
                tau_bound = gnorm + (tau_upper_bound(gnorm, sq, p, prob.q) - gnorm) \
                    * THRESHOLD_TAU_SLACK
                worst_tau = min(worst_tau, tau_bound - tau)
                tau_ok &= tau <= tau_bound
                est = empirical_bias(prob, x, p, 100_000, rng)
                b_bound = bias_upper_bound(sq, p, prob.q) + N_SE * est.bias_stderr
                worst_bias = min(worst_bias, b_bound - est.bias_norm)
                bias_ok &= est.bias_norm <= b_bound
        n = THRESHOLD_POINTS * len(THRESHOLD_PS)
        checks.append(Check(f"threshold.tau_bound.{label}", n, n, worst_tau, bool(tau_ok),
                            "measured=bound=#cases; margin=min slack"))
        checks.append(Check(f"threshold.bias_bound.{label}", n, n, worst_bias, bool(bias_ok),
                            "measured=bound=#cases; margin=min slack"))
    return checks


# ---------------------------------------------------------------------------
# One-step descent inequality
# ---------------------------------------------------------------------------

def suite_one_step_descent(seed: int = 12) -> list[Check]:
    rng = rng_stream(seed, "quantile_estimation")
    gamma, beta, n_mc = 0.1, 0.5, 100_000
    checks = []
    for label, prob, exact in (("quadratic_d10", gaussian_quadratic(10), False),
                               ("two_point", TwoPointExample(2.0, 0.75), True)):
        for i in range(10):
            p = THRESHOLD_PS[i % 3]
            if exact:
                x = rng.uniform(-5.0, 3.0, size=1)
            else:
                x = rng.normal(0.0, 2.0, size=prob.dim)
            res = analysis.one_step_descent_check(prob, x, gamma, p, beta, n_mc, rng,
                                                  exact=exact)
            checks.append(Check(
                f"descent.{label}.state{i}", res.lhs, res.rhs, res.margin,
                res.passed(N_SE), f"p={p} stderr={res.stderr:.3g}"))
    return checks


# ---------------------------------------------------------------------------
# Convergence bound, constant parameters
# ---------------------------------------------------------------------------

# (p, gamma, beta, c)
CONSTANT_STEP_CONFIGS = (
    (0.9, 0.1, 0.2, 0.2),
    (0.5, 0.05, 0.2, 0.2),
    (0.75, 0.01, 0.5, 0.1),
)
CONSTANT_STEP_T = 10_000


def _quantile_config(p, gamma, T, x0, exact=False, trace_every=None):
    return OptimizerConfig(
        clip=ClipConfig("quantile", QuantileSchedule("constant", p), exact=exact),
        steps=StepSchedule("constant", gamma), T=T, x0=x0,
        trace_every=trace_every or T)


def suite_constant_step_bound() -> list[Check]:
    prob = gaussian_quadratic(2)
    x0 = np.array([3.0, 3.0])
    checks = []
    for p, gamma, beta, c in CONSTANT_STEP_CONFIGS:
        cfg = _quantile_config(p, gamma, CONSTANT_STEP_T, x0)
        traces = run_many(prob, cfg, SEEDS, "qc_sgd")
        mean, se = analysis.mean_stderr([analysis.stationarity_measure(t, c) for t in traces])
        inputs = analysis.BoundInputs.for_problem(prob, x0, p, beta, c, T=CONSTANT_STEP_T)
        terms = analysis.qc_sgd_constant_bound(inputs, gamma)
        checks.append(_upper(f"constant_step.p{p}_g{gamma}", mean, terms.total,
                             f"stderr={se:.3g} terms=({terms.term1:.3g}, "
                             f"{terms.term2:.3g}, {terms.term3:.3g})"))
    # noiseless: the measured value is plain gradient descent
    prob0 = QuadraticProblem.isotropic(2, sigma=0.0)
    p, gamma, beta, c = CONSTANT_STEP_CONFIGS[0]
    tr = run_many(prob0, _quantile_config(p, gamma, CONSTANT_STEP_T, x0), [0], "qc_sgd")[0]
    # unit curvature: grad f(x_t) = (1 - gamma)^t x0
    gd = np.sum(gamma * (1 - gamma) ** (2 * np.arange(CONSTANT_STEP_T)) * (x0 @ x0))
    gd_measure = c * gd / (gamma * CONSTANT_STEP_T)
    inputs = analysis.BoundInputs.for_problem(prob0, x0, p, beta, c, T=CONSTANT_STEP_T)
    measured = analysis.stationarity_measure(tr, c)
    checks.append(_upper("constant_step.noiseless", measured,
                         analysis.qc_sgd_constant_bound(inputs, gamma).total,
                         f"gradient-descent value={gd_measure:.6g}"))
    checks.append(_upper("constant_step.noiseless_matches_gd",
                         abs(measured - gd_measure), 1e-12 * max(1.0, gd_measure)))
    return checks


# ---------------------------------------------------------------------------
# Private variant
# ---------------------------------------------------------------------------

# (B, sigma_dp)
PRIVATE_CONFIGS = ((1, 0.5), (16, 0.5), (16, 2.0))
PRIVATE_P, PRIVATE_BETA, PRIVATE_C = 0.9, 0.2, 0.2
PRIVATE_T = 10_000
PRIVATE_SLACK = 2.0


def suite_private_bound() -> list[Check]:
    prob = gaussian_quadratic(2)
    x0 = np.array([3.0, 3.0])
    p, beta, c = PRIVATE_P, PRIVATE_BETA, PRIVATE_C
    checks = []
    for B, sig in PRIVATE_CONFIGS:
        inputs = analysis.BoundInputs.for_problem(prob, x0, p, beta, c, T=PRIVATE_T,
                                                  B=B, sigma_dp=sig)
        limit = (p - beta / 2 - c) / (2 * prob.L * inputs.big_s)
        gamma = min(0.05, limit)
        cfg = _quantile_config(p, gamma, PRIVATE_T, x0)
        traces = run_many(prob, cfg, SEEDS, "dp_qc_sgd", batch=B, noise_multiplier=sig)
        mean, se = analysis.mean_stderr([analysis.stationarity_measure(t, c) for t in traces])
        rhs = analysis.dp_qc_sgd_bound(inputs, np.full(PRIVATE_T, gamma))
        checks.append(_upper(f"private.B{B}_sigma{sig}", mean, PRIVATE_SLACK * rhs,
                             f"gamma={gamma:.4g} stderr={se:.3g} rhs={rhs:.4g} (x2 slack)"))
    return checks


# ---------------------------------------------------------------------------
# Bias of a fixed quantile on the two-point problem
# ---------------------------------------------------------------------------

BIAS_GAMMAS = (1e-1, 1e-2, 1e-3)
BIAS_T = 100_000
BIAS_P = 0.5
BIAS_FLOOR_RATIO = 3.0


def plateau_floors(gammas=BIAS_GAMMAS, T=BIAS_T, seeds=SEEDS, p=BIAS_P) -> dict[float, float]:
    """Seed-averaged mean of ``|grad f(x_t)|`` over the second half of each run."""
    prob = TwoPointExample(2.0, 0.75)
    out = {}
    for gamma in gammas:
        cfg = _quantile_config(p, gamma, T, [0.0], exact=True)
        traces = run_many(prob, cfg, seeds, "qc_sgd")
        out[gamma] = float(np.mean([t.tail_grad_norm_mean for t in traces]))
    return out


def suite_bias_example() -> list[Check]:
    prob = TwoPointExample(2.0, 0.75)
    root = analysis.fixed_point_two_point(prob, BIAS_P)
    grad_at_root = abs(float(prob.grad([root])[0]))
    checks = [
        _lower("bias.grad_at_oracle_fixed_point", grad_at_root, 0.1, f"root={root:.10g}"),
        _upper("bias.oracle_root_residual",
               abs(analysis.expected_update_two_point(root, prob, BIAS_P)), 1e-9),
        Check("bias.unit_clip_fixed_point", analysis.unit_clip_fixed_point(0.75), -3.0, 0.0,
              analysis.unit_clip_fixed_point(0.75) == -3.0, "exact equality"),
    ]
    floors = plateau_floors()
    for gamma, fl in floors.items():
        checks.append(_lower(f"bias.plateau_floor.gamma{gamma:g}", fl, 0.0))
    vals = list(floors.values())
    checks.append(_upper("bias.plateau_floor_ratio", max(vals) / min(vals), BIAS_FLOOR_RATIO,
                         "max/min floor across gammas"))
    return checks


# ---------------------------------------------------------------------------
# Time-varying schedule
# ---------------------------------------------------------------------------

SCHEDULE_TS = (1_000, 10_000, 100_000)
SCHEDULE_GAMMA0 = 0.5
SCHEDULE_P0 = 0.5
SCHEDULE_X0 = -5.0


def schedule_minima(Ts=SCHEDULE_TS, seeds=SEEDS) -> dict[int, float]:
    """Seed-averaged ``min_t ||grad f(x_t)||^2`` for the balanced q=2 schedules."""
    prob = TwoPointExample(2.0, 0.75)
    steps, quantiles = balanced_schedules(2.0, SCHEDULE_GAMMA0, SCHEDULE_P0)
    out = {}
    for T in Ts:
        cfg = OptimizerConfig(ClipConfig("quantile", quantiles, exact=True), steps, T,
                              [SCHEDULE_X0], trace_every=T)
        traces = run_many(prob, cfg, seeds, "qc_sgd")
        out[T] = float(np.mean([t.min_grad_sq for t in traces]))
    return out


def suite_schedule() -> list[Check]:
    mins = schedule_minima()
    Ts = list(mins)
    checks = []
    for a, b in zip(Ts, Ts[1:]):
        checks.append(Check(f"schedule.min_grad_sq_decreases.T{a}_to_T{b}", mins[b], mins[a],
                            mins[a] - mins[b], mins[b] < mins[a]))
    checks.append(_upper("schedule.min_grad_sq_halved", mins[Ts[-1]], 0.5 * mins[Ts[0]],
                         f"T={Ts[-1]} vs half of T={Ts[0]}"))
    # the same start with a fixed quantile stays on its plateau
    prob = TwoPointExample(2.0, 0.75)
    cfg = _quantile_config(SCHEDULE_P0, 0.01, Ts[-1], [SCHEDULE_X0], exact=True)
    fixed = float(np.mean([t.min_grad_sq for t in run_many(prob, cfg, SEEDS, "qc_sgd")]))
    checks.append(_lower("schedule.fixed_quantile_min_grad_sq", fixed, mins[Ts[-1]],
                         "fixed p=0.5, gamma=0.01 for comparison"))
    return checks


# ---------------------------------------------------------------------------
# DP reduction and noise coupling
# ---------------------------------------------------------------------------

DP_NOISE_DRAWS = 10_000
DP_NOISE_RTOL = 0.05


def suite_dp_noise() -> list[Check]:
    prob = gaussian_quadratic(2)
    x0 = np.array([1.0, -2.0])
    cfg = _quantile_config(0.9, 0.05, 2_000, x0, trace_every=1)
    qc = run_many(prob, cfg, [5], "qc_sgd")[0]
    dp = run_many(prob, cfg, [5], "dp_qc_sgd", batch=1, noise_multiplier=0.0)[0]
    identical = all(np.array_equal(qc.columns[k], dp.columns[k], equal_nan=True)
                    for k in qc.columns) and np.array_equal(qc.x_final, dp.x_final)
    checks = [Check("dp.sigma0_B1_identical_to_qc_sgd", float(identical), 1.0, 0.0,
                    bool(identical), "bitwise trace comparison")]
    for B, sig in ((1, 1.5), (16, 1.5)):
        noise, scale = probe_noise(prob, cfg, DPConfig.with_sigma(B, sig), DP_NOISE_DRAWS,
                                   seed=3)
        coupled = float(np.max(np.abs(scale / (sig * _probe_taus(prob, cfg, B, sig)) - 1)))
        target = float(np.mean(scale ** 2))
        for j in range(prob.dim):
            ratio = float(noise[:, j].var()) / target
            checks.append(_upper(f"dp.noise_variance.B{B}.coord{j}", abs(ratio - 1),
                                 DP_NOISE_RTOL, f"var/(tau*sigma)^2={ratio:.4f}"))
        checks.append(_upper(f"dp.noise_scale_coupling.B{B}", coupled, 1e-12,
                             "max |noise_scale/(tau*sigma) - 1|"))
    return checks


def _probe_taus(prob, cfg, B, sig):
    cfg = cfg.replace(T=DP_NOISE_DRAWS, trace_every=1, seed=3)
    tr = run_many(prob, cfg, [3], "dp_qc_sgd", batch=B, noise_multiplier=sig, hold_x=True)[0]
    return tr.tau


# keys are the command-line suite identifiers
SUITES = {
    "lemma1": suite_threshold_bias,
    "lemma2": suite_one_step_descent,
    "theorem1": suite_constant_step_bound,
    "theorem2": suite_private_bound,
    "bias_example": suite_bias_example,
    "schedule": suite_schedule,
    "dp_noise": suite_dp_noise,
}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        return [c for fn in SUITES.values() for c in fn()]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[name]()
