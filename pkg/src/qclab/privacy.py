"""Differentially private quantile-clipped SGD.

Each iteration clips ``B`` per-sample gradients against the shared threshold
``tau(x_t)``, averages them and adds one Gaussian vector with per-coordinate
standard deviation ``tau(x_t) * sigma_dp``.

Note:
    ``sigma_dp`` here only has the *shape* of a Gaussian-mechanism
    calibration, ``C * sqrt(T ln(1/delta)) / epsilon`` with a user-chosen
    constant ``C``.  No privacy accountant is implemented, so a run does not
    certify any (epsilon, delta) guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .optimizer import OptimizerConfig, RunTrace, run_many
from .problems import StochasticProblem

DEFAULT_C = 2.0


def sigma_dp(epsilon: float, delta: float, T: int, C: float = DEFAULT_C) -> float:
    """Noise multiplier ``C * sqrt(T * ln(1/delta)) / epsilon``."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    if C < 0:
        raise ValueError(f"C must be non-negative, got {C}")
    return C * math.sqrt(T * math.log(1.0 / delta)) / epsilon


def big_s(B: int, sigma: float) -> float:
    """Batch-plus-noise factor ``1/B + sigma^2``."""
    if B < 1:
        raise ValueError(f"B must be at least 1, got {B}")
    return 1.0 / B + sigma * sigma


def dp_max_step_size(p: float, beta: float, c: float, L: float, big_s: float) -> float:
    """Largest admissible step ``(p - beta/2 - c) / (2 L S)`` for the private method."""
    if not (0 < beta < 1 and 0 < c < 1):
        raise ValueError("beta and c must lie in (0, 1)")
    if beta / 2 + c > p:
        raise ValueError(f"beta/2 + c = {beta / 2 + c} exceeds p = {p}")
    if not (L > 0 and big_s > 0):
        raise ValueError("L and S must be positive")
    return (p - beta / 2 - c) / (2 * L * big_s)


@dataclass(frozen=True)
class DPConfig:
    B: int = 1
    epsilon: float = 1.0
    delta: float = 1e-5
    T: int = 1
    C: float = DEFAULT_C
    override_sigma_dp: float | None = None

    def __post_init__(self):
        if self.B < 1:
            raise ValueError(f"B must be at least 1, got {self.B}")
        if self.override_sigma_dp is not None and self.override_sigma_dp < 0:
            raise ValueError("override_sigma_dp must be non-negative")
        # validates epsilon, delta, T, C
        sigma_dp(self.epsilon, self.delta, self.T, self.C)

    @property
    def sigma_dp(self) -> float:
        if self.override_sigma_dp is not None:
            return float(self.override_sigma_dp)
        return sigma_dp(self.epsilon, self.delta, self.T, self.C)

    @property
    def big_s(self) -> float:
        return big_s(self.B, self.sigma_dp)

    @classmethod
    def with_sigma(cls, B: int, sigma: float, T: int = 1) -> "DPConfig":
        return cls(B=B, T=T, override_sigma_dp=sigma)


def run_dp_qc_sgd(problem: StochasticProblem, opt_config: OptimizerConfig,
                  dp_config: DPConfig, seeds=None) -> RunTrace | list[RunTrace]:
    """Run the private method; returns one trace, or a list when ``seeds`` is given."""
    many = seeds is not None
    seeds = list(seeds) if many else [opt_config.seed]
    traces = run_many(problem, opt_config, seeds, "dp_qc_sgd",
                      batch=dp_config.B, noise_multiplier=dp_config.sigma_dp)
    return traces if many else traces[0]


def probe_noise(problem: StochasticProblem, opt_config: OptimizerConfig,
                dp_config: DPConfig, n: int, seed: int = 0):
    """Hold ``x`` at ``opt_config.x0`` for ``n`` iterations and collect the injected noise.

    Returns ``(noise, noise_scale)`` with shapes ``(n, dim)`` and ``(n,)``,
    where ``noise`` is the update direction minus its clipped-gradient part.
    """
    cfg = opt_config.replace(T=n, trace_every=1, seed=seed)
    tr = run_many(problem, cfg, [seed], "dp_qc_sgd", batch=dp_config.B,
                  noise_multiplier=dp_config.sigma_dp, hold_x=True)[0]
    return tr.extra["update"] - tr.extra["clipped_mean"], tr.noise_scale
