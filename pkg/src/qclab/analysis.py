"""Right-hand sides of the convergence bounds and Monte Carlo checks against them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import bisect

from .clipping import (
    DEFAULT_M,
    clip_coefficient,
    clip_coefficients,
    estimate_threshold,
    exact_quantile_two_point,
)
from .core import as_param_vector
from .optimizer import RunTrace
from .problems import StochasticProblem, TwoPointExample

# Relative slack when checking step-size conditions, for schedules built from
# the same closed form.
_STEP_RTOL = 1e-12


@dataclass(frozen=True)
class BoundInputs:
    """Constants entering the bounds.  ``F0 = f(x0) - f_inf``."""

    F0: float
    L: float
    sigma_q: float
    q: float
    p: float
    beta: float
    c: float
    T: int | None = None
    B: int = 1
    sigma_dp: float = 0.0

    def __post_init__(self):
        if self.F0 < 0 or not self.L > 0 or self.sigma_q < 0:
            raise ValueError("need F0 >= 0, L > 0 and sigma_q >= 0")
        if not 1.0 < self.q <= 2.0:
            raise ValueError(f"q must lie in (1, 2], got {self.q}")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not (0 < self.beta < 1 and 0 < self.c < 1):
            raise ValueError("beta and c must lie in (0, 1)")

    @property
    def h(self) -> float:
        return 1.0 - self.p

    @property
    def big_s(self) -> float:
        return 1.0 / self.B + self.sigma_dp ** 2

    @classmethod
    def for_problem(cls, problem: StochasticProblem, x0, p, beta, c, **kw) -> "BoundInputs":
        F0 = problem.f(as_param_vector(x0)) - problem.f_inf
        return cls(F0=F0, L=problem.L, sigma_q=problem.require_sigma_q(), q=problem.q,
                   p=p, beta=beta, c=c, **kw)


class BoundTerms(NamedTuple):
    term1: float
    term2: float
    term3: float
    total: float


def _h_array(inputs: BoundInputs, T: int, hs) -> np.ndarray:
    if hs is None:
        return np.full(T, inputs.h)
    hs = np.broadcast_to(np.asarray(hs, dtype=np.float64), (T,))
    if np.any(hs <= 0) or np.any(hs >= 1):
        raise ValueError("every h_t must lie in (0, 1)")
    return hs


def qc_sgd_bound(inputs: BoundInputs, gammas, hs=None) -> float:
    """Bound on ``(c / Gamma_T) sum_t gamma_t ||grad f(x_t)||^2`` for quantile-clipped SGD.

    ``gammas`` lists the step sizes; ``hs`` optionally gives a per-iteration
    ``h_t = 1 - p_t`` (default ``1 - inputs.p`` throughout).

    Raises:
        ValueError: if some ``gamma_t`` exceeds ``(2 p_t - beta - c) / (2L)``.
    """
    g = np.asarray(gammas, dtype=np.float64)
    h = _h_array(inputs, g.size, hs)
    limit = (2.0 * (1.0 - h) - inputs.beta - inputs.c) / (2.0 * inputs.L)
    if np.any(g <= 0) or np.any(g > limit * (1 + _STEP_RTOL)):
        raise ValueError("step sizes violate 0 < gamma_t <= (2p - beta - c) / (2L)")
    q, L = inputs.q, inputs.L
    gamma_total = g.sum()
    noise = np.sum(g * h ** (-2.0 / q) * (2.0 * L * g + h * h / inputs.beta))
    return 2.0 * inputs.F0 / gamma_total + inputs.sigma_q ** 2 * noise / gamma_total


def qc_sgd_constant_bound(inputs: BoundInputs, gamma: float) -> BoundTerms:
    """Three-term bound for a constant step size; needs ``inputs.T``."""
    if inputs.T is None:
        raise ValueError("BoundInputs.T is required")
    limit = (2.0 * inputs.p - inputs.beta - inputs.c) / (2.0 * inputs.L)
    if not 0 < gamma <= limit * (1 + _STEP_RTOL):
        raise ValueError(f"gamma={gamma} violates 0 < gamma <= {limit}")
    h, q, s2 = inputs.h, inputs.q, inputs.sigma_q ** 2
    t1 = 2.0 * inputs.F0 / (gamma * inputs.T)
    t2 = 2.0 * gamma * inputs.L * s2 * h ** (-2.0 / q)
    t3 = s2 * h ** (2.0 - 2.0 / q) / inputs.beta
    return BoundTerms(t1, t2, t3, t1 + t2 + t3)


def dp_qc_sgd_bound(inputs: BoundInputs, gammas) -> float:
    """Bound for the private method with batch ``inputs.B`` and multiplier ``inputs.sigma_dp``.

    Raises:
        ValueError: if some ``gamma_t`` exceeds ``(p - beta/2 - c) / (2 L S)``.
    """
    g = np.asarray(gammas, dtype=np.float64)
    if inputs.beta / 2 + inputs.c > inputs.p:
        raise ValueError("need beta/2 + c <= p")
    S = inputs.big_s
    limit = (inputs.p - inputs.beta / 2 - inputs.c) / (2.0 * inputs.L * S)
    if np.any(g <= 0) or np.any(g > limit * (1 + _STEP_RTOL)):
        raise ValueError("step sizes violate gamma_t <= (p - beta/2 - c) / (2 L S)")
    h, q = inputs.h, inputs.q
    gamma_total = g.sum()
    noise = np.sum(g * h ** (-2.0 / q) * (2.0 * g * inputs.L * S + h * h / inputs.beta / 2.0))
    return inputs.F0 / gamma_total + inputs.sigma_q ** 2 * noise / gamma_total


def dp_qc_sgd_constant_bound(inputs: BoundInputs, gamma: float) -> BoundTerms:
    """Constant-step form of :func:`dp_qc_sgd_bound`; needs ``inputs.T``."""
    if inputs.T is None:
        raise ValueError("BoundInputs.T is required")
    total = dp_qc_sgd_bound(inputs, np.full(inputs.T, gamma))
    h, q, s2 = inputs.h, inputs.q, inputs.sigma_q ** 2
    t1 = inputs.F0 / (gamma * inputs.T)
    t2 = 2.0 * gamma * inputs.L * s2 * h ** (-2.0 / q) * inputs.big_s
    t3 = s2 * h ** (2.0 - 2.0 / q) / inputs.beta / 2.0
    return BoundTerms(t1, t2, t3, total)


def fixed_clipping_bound(F0: float, gamma: float, T: int, tau: float, L: float,
                       sigma: float) -> float:
    """Order-of-magnitude bound for SGD with a constant threshold (constants dropped)."""
    if not (gamma > 0 and T >= 1 and tau > 0 and L > 0 and F0 >= 0 and sigma >= 0):
        raise ValueError("need positive gamma, T, tau, L and non-negative F0, sigma")
    s2 = sigma * sigma
    tail = 0.0 if math.isinf(tau) else min(s2, s2 * s2 / (tau * tau))
    return (F0 / (gamma * T * tau)) ** 2 + F0 / (gamma * T) + gamma * L * s2 + tail


def stationarity_measure(trace: RunTrace, c: float) -> float:
    """``(c / Gamma_T) sum_t gamma_t ||grad f(x_t)||^2`` over all iterations of ``trace``."""
    if trace.gamma_sum <= 0:
        raise ValueError("trace has no steps")
    return c * trace.weighted_grad_sq_sum / trace.gamma_sum


def mean_stderr(values) -> tuple[float, float]:
    """Sample mean and its standard error."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


# ---------------------------------------------------------------------------
# One-step recursion check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DescentCheck:
    lhs: float
    rhs: float
    margin: float
    stderr: float
    alpha_bar: float
    tau: float

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.margin))

    def passed(self, n_se: float = 4.0) -> bool:
        return self.margin >= -n_se * self.stderr


def one_step_descent_bound(f_x: float, grad_sq: float, alpha_bar: float, gamma: float,
                           p: float, beta: float, L: float, sigma_q: float, q: float) -> float:
    """Upper bound on ``E[f(x_{t+1}) | x_t]`` after one quantile-clipped step."""
    h = 1.0 - p
    return (f_x - gamma * (alpha_bar - beta / 2 - gamma * L) * grad_sq
            + 0.5 * gamma / beta * h ** (2 - 2 / q) * sigma_q ** 2
            + gamma ** 2 * L * sigma_q ** 2 * h ** (-2 / q))


def one_step_descent_check(problem: StochasticProblem, x, gamma: float, p: float,
                           beta: float, n_mc: int, rng: np.random.Generator,
                           m: int = DEFAULT_M, exact: bool = False) -> DescentCheck:
    """Compare ``n_mc`` simulated steps from ``x`` with the one-step bound.

    One threshold is drawn at ``x`` and shared by all simulated steps.  The
    margin is the mean of per-sample ``rhs_i - f(x_i')``, where ``rhs_i``
    uses the sample's own clip coefficient in place of its mean; its average
    is therefore exactly ``rhs - lhs`` and its standard error accounts for
    the noise in both sides.
    """
    if n_mc < 100_000:
        raise ValueError(f"n_mc must be at least 10^5, got {n_mc}")
    x = as_param_vector(x)
    sigma_q = problem.require_sigma_q()
    tau = estimate_threshold(problem, x, p, m, rng, exact=exact).tau
    g = problem.grad_samples(x, rng, n_mc)
    alpha = clip_coefficients(np.linalg.norm(g, axis=1), tau)
    f_next = np.asarray(problem.f(x - gamma * alpha[:, None] * g))
    grad = problem.grad(x)
    gsq = float(grad @ grad)
    rhs_i = one_step_descent_bound(problem.f(x), gsq, alpha, gamma, p, beta,
                                   problem.L, sigma_q, problem.q)
    diff = rhs_i - f_next
    return DescentCheck(
        lhs=float(f_next.mean()),
        rhs=float(rhs_i.mean()),
        margin=float(diff.mean()),
        stderr=float(diff.std(ddof=1) / math.sqrt(n_mc)),
        alpha_bar=float(alpha.mean()),
        tau=tau,
    )


def one_step_descent_exact_two_point(problem: TwoPointExample, x: float, gamma: float,
                                     p: float, beta: float) -> tuple[float, float]:
    """``(E[f(x')], rhs)`` for one exact-threshold step, by enumerating both outcomes."""
    tau = exact_quantile_two_point(x, problem, p)
    (g1, g2), w = problem.atoms(x), problem.omega
    a1, a2 = clip_coefficient(abs(g1), tau), clip_coefficient(abs(g2), tau)
    lhs = w * problem.f([x - gamma * a1 * g1]) + (1 - w) * problem.f([x - gamma * a2 * g2])
    grad = x + problem.r * w
    rhs = one_step_descent_bound(problem.f([x]), grad * grad, w * a1 + (1 - w) * a2,
                                 gamma, p, beta, problem.L, problem.require_sigma_q(), problem.q)
    return lhs, rhs


# ---------------------------------------------------------------------------
# Two-point bias example
# ---------------------------------------------------------------------------

def expected_update_two_point(x: float, problem: TwoPointExample, p: float) -> float:
    """Exact mean clipped gradient at ``x`` under the exact quantile threshold."""
    tau = exact_quantile_two_point(x, problem, p)
    g1, g2 = problem.atoms(x)
    w = problem.omega
    return (w * clip_coefficient(abs(g1), tau) * g1
            + (1 - w) * clip_coefficient(abs(g2), tau) * g2)


def fixed_point_two_point(problem: TwoPointExample, p: float,
                          search_interval: tuple[float, float] = (-50.0, -1e-6),
                          tol: float = 1e-10) -> float:
    """Root of :func:`expected_update_two_point` by bisection.

    Raises:
        ValueError: if the interval does not bracket a sign change.
    """
    lo, hi = search_interval
    flo = expected_update_two_point(lo, problem, p)
    fhi = expected_update_two_point(hi, problem, p)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise ValueError(f"no sign change of the expected update on [{lo}, {hi}]")
    return bisect(lambda v: expected_update_two_point(v, problem, p), lo, hi,
                  xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=400)


def unit_clip_fixed_point(omega: float) -> float:
    """Fixed point ``-omega / (1 - omega)`` of the unit-normalised clipped estimator."""
    if not 0.5 < omega < 1.0:
        raise ValueError(f"omega must lie in (1/2, 1), got {omega}")
    return -omega / (1.0 - omega)
