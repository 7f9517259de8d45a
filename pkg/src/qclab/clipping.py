"""Clip coefficients, quantile thresholds and the closed-form threshold/bias bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import QuantileSchedule, as_param_vector
from .problems import StochasticProblem, TwoPointExample

DEFAULT_M = 512


@dataclass(frozen=True)
class ClipConfig:
    """How the per-iteration threshold is chosen.

    ``mode`` is ``"quantile"``, ``"constant"`` or ``"none"``.  In quantile mode
    the level comes from ``quantiles`` and the threshold is the empirical
    quantile of ``m`` fresh gradient norms, or the exact discrete quantile
    when ``exact`` is set and the problem supports it.
    """

    mode: str = "quantile"
    quantiles: QuantileSchedule | None = None
    tau: float | None = None
    m: int = DEFAULT_M
    exact: bool = False

    def __post_init__(self):
        if self.mode == "quantile":
            if self.quantiles is None:
                raise ValueError("quantile clipping needs a QuantileSchedule")
            if self.m < 2:
                raise ValueError(f"m must be at least 2, got {self.m}")
        elif self.mode == "constant":
            if self.tau is None or not self.tau > 0:
                raise ValueError(f"constant clipping needs tau > 0, got {self.tau}")
        elif self.mode != "none":
            raise ValueError(f"unknown clip mode {self.mode!r}")


@dataclass(frozen=True)
class ThresholdEstimate:
    tau: float
    p: float
    source: str  # exact_discrete | empirical_order_statistic | constant
    m_used: int


def clip_coefficient(grad_norm: float, tau: float) -> float:
    """``min(1, tau / grad_norm)``, with 1 for a zero gradient."""
    if grad_norm < 0 or tau < 0:
        raise ValueError("grad_norm and tau must be non-negative")
    if grad_norm <= tau:
        return 1.0
    return tau / grad_norm


def clip_coefficients(norms: np.ndarray, tau: float) -> np.ndarray:
    """Vectorised :func:`clip_coefficient`."""
    norms = np.asarray(norms, dtype=np.float64)
    over = norms > tau
    out = np.ones_like(norms)
    np.divide(tau, norms, out=out, where=over)
    return out


def quantile_rank(p: float, m: int) -> int:
    """1-based rank ``max(1, ceil(p*m))`` of the order statistic used as quantile.

    ``p*m`` within 1e-9 of an integer is treated as that integer, so decimal
    levels such as ``0.7 * 10`` are not pushed up by representation error.
    """
    return max(1, math.ceil(p * m - 1e-9))


def empirical_quantile(norms, p: float) -> float:
    """The ``quantile_rank(p, m)``-th smallest of ``m`` values."""
    arr = np.asarray(norms, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("cannot take the quantile of an empty sample")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    k = quantile_rank(p, arr.size)
    return float(np.partition(arr, k - 1)[k - 1])


def exact_quantile_two_point(x, problem: TwoPointExample, p: float) -> float:
    """Smallest gradient-norm atom whose cumulative probability reaches ``p``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    g1, g2 = problem.atoms(x)
    a1, a2 = abs(g1), abs(g2)
    w = problem.omega
    if a1 == a2:
        return a1
    if a1 < a2:
        return a1 if w >= p else a2
    return a2 if 1.0 - w >= p else a1


def exact_quantile_two_point_batch(x: np.ndarray, problem: TwoPointExample,
                                   p: float) -> np.ndarray:
    """:func:`exact_quantile_two_point` for iterates of shape ``(S, 1)``; returns ``(S,)``."""
    x = np.asarray(x, dtype=np.float64)[..., 0]
    a1 = np.abs(x + problem.r)
    a2 = np.abs(x)
    w = problem.omega
    lo_first = a1 if w >= p else a2
    lo_second = a2 if 1.0 - w >= p else a1
    return np.where(a1 == a2, a1, np.where(a1 < a2, lo_first, lo_second))


def supports_exact(problem: StochasticProblem) -> bool:
    return isinstance(problem, TwoPointExample)


def estimate_threshold(problem: StochasticProblem, x, p: float, m: int,
                       rng: np.random.Generator, exact: bool = False) -> ThresholdEstimate:
    """Threshold at ``x``: exact discrete quantile or the empirical quantile of ``m`` draws.

    Exact mode is honoured only for problems with a closed-form norm
    distribution; others fall back to sampling.
    """
    if m < 2:
        raise ValueError(f"m must be at least 2, got {m}")
    if exact and supports_exact(problem):
        return ThresholdEstimate(exact_quantile_two_point(x, problem, p), p, "exact_discrete", 0)
    norms = np.linalg.norm(problem.grad_samples(x, rng, m), axis=1)
    return ThresholdEstimate(empirical_quantile(norms, p), p, "empirical_order_statistic", m)


def _check_pq(p, q):
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if not 1.0 < q <= 2.0:
        raise ValueError(f"q must lie in (1, 2], got {q}")


def tau_upper_bound(grad_norm: float, sigma_q: float, p: float, q: float) -> float:
    """Upper bound ``||grad f(x)|| + sigma_q (1-p)^(-1/q)`` on the quantile threshold."""
    _check_pq(p, q)
    return grad_norm + sigma_q * (1.0 - p) ** (-1.0 / q)


def bias_upper_bound(sigma_q: float, p: float, q: float) -> float:
    """Upper bound ``sigma_q (1-p)^(1-1/q)`` on the clipping bias."""
    _check_pq(p, q)
    return sigma_q * (1.0 - p) ** (1.0 - 1.0 / q)


@dataclass(frozen=True)
class BiasEstimate:
    bias_norm: float
    alpha_bar: float
    bias_stderr: float
    alpha_stderr: float
    tau: float

    def __iter__(self):
        # unpacks as (bias_norm, alpha_bar)
        return iter((self.bias_norm, self.alpha_bar))


def empirical_bias(problem: StochasticProblem, x, p: float, n_samples: int,
                   rng: np.random.Generator, m: int = DEFAULT_M,
                   exact: bool = False) -> BiasEstimate:
    """Monte Carlo ``||E[a g] - E[a] grad f(x)||`` and ``E[a]`` at a fixed threshold.

    The threshold is drawn first (``m`` samples, or exact), then
    ``n_samples`` fresh gradients are clipped against it.  Since the samples
    are unbiased the bias equals ``E[(a - 1)(g - grad f(x))]``, which is
    averaged instead: it is exactly zero when nothing is clipped and has
    lower variance when clipping is rare.
    """
    if n_samples < 10_000:
        raise ValueError(f"n_samples must be at least 10^4, got {n_samples}")
    x = as_param_vector(x)
    tau = estimate_threshold(problem, x, p, m, rng, exact=exact).tau
    g = problem.grad_samples(x, rng, n_samples)
    alpha = clip_coefficients(np.linalg.norm(g, axis=1), tau)
    contrib = (alpha - 1.0)[:, None] * (g - problem.grad(x))
    bias = contrib.mean(axis=0)
    bias_se = math.sqrt(float(contrib.var(axis=0, ddof=1).sum()) / n_samples)
    return BiasEstimate(
        bias_norm=float(np.linalg.norm(bias)),
        alpha_bar=float(alpha.mean()),
        bias_stderr=bias_se,
        alpha_stderr=float(alpha.std(ddof=1)) / math.sqrt(n_samples),
        tau=tau,
    )
