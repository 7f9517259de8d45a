"""SGD, clipped SGD and quantile-clipped SGD with per-iteration traces.

All optimizers share one engine that advances several seeds at once.  Each
seed keeps its own three random streams and consumes them in fixed-size
blocks, so a seed's trajectory does not depend on which other seeds run
alongside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .clipping import (
    ClipConfig,
    clip_coefficients,
    exact_quantile_two_point_batch,
    quantile_rank,
    supports_exact,
)
from .core import RunStreams, StepSchedule, as_param_vector
from .problems import StochasticProblem

ALGORITHMS = ("sgd", "clipped_sgd", "qc_sgd", "dp_qc_sgd")

# Floats drawn per stream per block are capped near this many per seed.
_BLOCK_ELEMS = 1 << 16
_MAX_BLOCK = 1024


class DivergenceError(ArithmeticError):
    """An iterate or its gradient norm became non-finite."""

    def __init__(self, seed: int, t: int):
        super().__init__(f"seed {seed}: diverged at iteration {t}")
        self.seed = seed
        self.t = t


@dataclass(frozen=True, eq=False)
class OptimizerConfig:
    clip: ClipConfig
    steps: StepSchedule
    T: int
    x0: np.ndarray
    seed: int = 0
    trace_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "x0", as_param_vector(self.x0, name="x0"))
        if self.T < 1:
            raise ValueError(f"T must be at least 1, got {self.T}")
        if self.trace_every < 1 or self.T % self.trace_every:
            raise ValueError(
                f"trace_every={self.trace_every} must be positive and divide T={self.T}")

    def replace(self, **changes) -> "OptimizerConfig":
        return replace(self, **changes)


TRACE_COLUMNS = ("iter", "f", "grad_norm_sq", "tau", "p", "gamma",
                 "alpha", "clipped", "noise_scale", "x_norm")


@dataclass(eq=False)
class RunTrace:
    """Recorded iterations of one run.

    Rows hold the state *before* the update at iterations ``0, k, 2k, ...``
    (``k = trace_every``).  ``alpha`` is the mean clip coefficient over the
    batch and ``clipped`` the fraction of the batch that was clipped.
    Unclipped runs record ``tau = inf``; ``p`` is ``nan`` outside quantile mode.

    The summary fields are accumulated over every iteration, not just the
    recorded ones.
    """

    algorithm: str
    seed: int
    T: int
    trace_every: int
    columns: dict[str, np.ndarray]
    x_final: np.ndarray
    gamma_sum: float
    weighted_grad_sq_sum: float
    min_grad_sq: float
    tail_grad_norm_mean: float
    f_final: float = math.nan
    extra: dict = field(default_factory=dict)

    def __getattr__(self, name):
        cols = self.__dict__.get("columns")
        if cols is not None and name in cols:
            return cols[name]
        raise AttributeError(name)

    def __len__(self):
        return len(self.columns["iter"])

    @classmethod
    def from_rows(cls, gamma, grad_norm_sq, **kw) -> "RunTrace":
        """Build a trace from per-iteration step sizes and squared gradient norms."""
        gamma = np.asarray(gamma, dtype=np.float64)
        gsq = np.asarray(grad_norm_sq, dtype=np.float64)
        T = gamma.size
        cols = {c: np.full(T, np.nan) for c in TRACE_COLUMNS}
        cols["iter"] = np.arange(T)
        cols["gamma"] = gamma
        cols["grad_norm_sq"] = gsq
        tail = np.sqrt(gsq[T // 2:])
        return cls(kw.pop("algorithm", "manual"), kw.pop("seed", 0), T, 1, cols,
                   kw.pop("x_final", np.array([np.nan])),
                   float(gamma.sum()), float(gamma @ gsq), float(gsq.min()),
                   float(tail.mean()), **kw)


class _BlockDraws:
    """Per-seed draws of ``draw(rng, (K, *per_iter))``, served one iteration at a time."""

    def __init__(self, rngs, draw, per_iter_elems: int):
        self._rngs = rngs
        self._draw = draw
        self._block = max(1, min(_MAX_BLOCK, _BLOCK_ELEMS // max(1, per_iter_elems)))
        self._buf = None
        self._pos = self._block

    def next(self) -> np.ndarray:
        if self._pos == self._block:
            self._buf = np.stack([self._draw(rng, self._block) for rng in self._rngs], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def _resolve_clip(algorithm: str, clip: ClipConfig) -> ClipConfig:
    if algorithm == "sgd":
        return ClipConfig(mode="none")
    if algorithm == "clipped_sgd" and clip.mode != "constant":
        raise ValueError("clipped_sgd needs a constant-threshold ClipConfig")
    if algorithm in ("qc_sgd", "dp_qc_sgd") and clip.mode != "quantile":
        raise ValueError(f"{algorithm} needs a quantile ClipConfig")
    return clip


def run_many(problem: StochasticProblem, config: OptimizerConfig, seeds,
             algorithm: str = "qc_sgd", batch: int = 1,
             noise_multiplier: float = 0.0, hold_x: bool = False) -> list[RunTrace]:
    """Run ``algorithm`` once per seed and return the traces in seed order.

    ``batch`` and ``noise_multiplier`` are the mini-batch size and the DP
    noise multiplier; the Gaussian perturbation added to the averaged
    clipped gradient has per-coordinate standard deviation
    ``tau_t * noise_multiplier``.

    With ``hold_x`` the iterate is never moved (a probe run at ``x0``) and
    each trace keeps the recorded update directions in
    ``extra["update"]`` and their noise-free parts in ``extra["clipped_mean"]``.

    Raises:
        DivergenceError: if any seed's iterate becomes non-finite.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if batch < 1:
        raise ValueError(f"batch size must be at least 1, got {batch}")
    if noise_multiplier < 0:
        raise ValueError("noise multiplier must be non-negative")
    clip = _resolve_clip(algorithm, config.clip)
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("no seeds given")
    d = problem.dim
    if config.x0.size != d:
        raise ValueError(f"x0 has dimension {config.x0.size}, problem has {d}")

    S, T, every = len(seeds), config.T, config.trace_every
    streams = [RunStreams.from_seed(s) for s in seeds]
    xi_elems = problem.xi_width

    data = _BlockDraws([st.data for st in streams],
                       lambda rng, k: problem.draw_xi(rng, (k, batch)), batch * xi_elems)
    quantile_mode = clip.mode == "quantile"
    exact = quantile_mode and clip.exact and supports_exact(problem)
    if quantile_mode and not exact:
        m = clip.m
        qdraws = _BlockDraws([st.quantile for st in streams],
                             lambda rng, k: problem.draw_xi(rng, (k, m)), m * xi_elems)
    if noise_multiplier > 0:
        ndraws = _BlockDraws([st.noise for st in streams],
                             lambda rng, k: rng.standard_normal((k, d)), d)

    gammas = [config.steps.at(t) for t in range(T)]
    if quantile_mode:
        ps = [clip.quantiles.at(t) for t in range(T)]
    if clip.mode == "constant":
        tau_const = np.full(S, float(clip.tau))
    elif clip.mode == "none":
        tau_const = np.full(S, np.inf)

    n_rec = T // every
    rec = {c: np.empty((S, n_rec)) for c in TRACE_COLUMNS if c != "iter"}
    if hold_x:
        upd = np.empty((S, n_rec, d))
        upd_clean = np.empty((S, n_rec, d))
    x = np.tile(config.x0, (S, 1))
    gamma_sum = 0.0
    wsum = np.zeros(S)
    gmin = np.full(S, np.inf)
    tail = np.zeros(S)
    tail_start = T // 2

    for t in range(T):
        gamma = gammas[t]
        g_true = problem.grad(x)
        with np.errstate(over="ignore", invalid="ignore"):
            gsq = np.einsum("sd,sd->s", g_true, g_true)
            wsum += gamma * gsq
        if not np.isfinite(wsum).all():
            raise DivergenceError(seeds[int(np.flatnonzero(~np.isfinite(wsum))[0])], t)
        gamma_sum += gamma
        np.minimum(gmin, gsq, out=gmin)
        if t >= tail_start:
            tail += np.sqrt(gsq)

        if quantile_mode:
            p = ps[t]
            if exact:
                tau = exact_quantile_two_point_batch(x, problem, p)
            else:
                probe = problem.grad_at(x, qdraws.next())
                norms = np.sqrt(np.einsum("smd,smd->sm", probe, probe))
                k = quantile_rank(p, norms.shape[1]) - 1
                tau = np.partition(norms, k, axis=1)[:, k]
        else:
            p = math.nan
            tau = tau_const

        grads = problem.grad_at(x, data.next())
        gnorm = np.sqrt(np.einsum("sbd,sbd->sb", grads, grads))
        alpha = clip_coefficients(gnorm, tau[:, None])
        clean = (alpha[:, :, None] * grads).mean(axis=1)
        if noise_multiplier > 0:
            scale = tau * noise_multiplier
            step = clean + scale[:, None] * ndraws.next()
        else:
            scale = np.zeros(S)
            step = clean

        if t % every == 0:
            r = t // every
            rec["f"][:, r] = problem.f(x)
            rec["grad_norm_sq"][:, r] = gsq
            rec["tau"][:, r] = tau
            rec["p"][:, r] = p
            rec["gamma"][:, r] = gamma
            rec["alpha"][:, r] = alpha.mean(axis=1)
            rec["clipped"][:, r] = (alpha < 1.0).mean(axis=1)
            rec["noise_scale"][:, r] = scale
            rec["x_norm"][:, r] = np.sqrt(np.einsum("sd,sd->s", x, x))
            if hold_x:
                upd[:, r] = step
                upd_clean[:, r] = clean

        if hold_x:
            continue
        x = x - gamma * step
        if not np.isfinite(x).all():
            bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
            raise DivergenceError(seeds[bad], t)

    f_final = np.atleast_1d(problem.f(x))
    iters = np.arange(0, T, every)
    n_tail = T - tail_start
    traces = []
    for i, seed in enumerate(seeds):
        cols = {"iter": iters}
        cols.update({c: rec[c][i].copy() for c in rec})
        traces.append(RunTrace(
            algorithm=algorithm, seed=seed, T=T, trace_every=every, columns=cols,
            x_final=x[i].copy(), gamma_sum=gamma_sum,
            weighted_grad_sq_sum=float(wsum[i]), min_grad_sq=float(gmin[i]),
            tail_grad_norm_mean=float(tail[i] / n_tail), f_final=float(f_final[i]),
        ))
        if hold_x:
            traces[-1].extra.update(update=upd[i], clipped_mean=upd_clean[i])
    return traces


def qc_sgd_step(x, gamma: float, grad_sample, tau: float) -> np.ndarray:
    """One quantile-clipped step ``x - gamma * min(1, tau/||g||) * g``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    g = np.asarray(grad_sample, dtype=np.float64)
    alpha = clip_coefficients(np.linalg.norm(g), tau)
    return np.asarray(x, dtype=np.float64) - gamma * alpha * g


def run_qc_sgd(problem: StochasticProblem, config: OptimizerConfig) -> RunTrace:
    return run_many(problem, config, [config.seed], "qc_sgd")[0]


def run_clipped_sgd(problem: StochasticProblem, config: OptimizerConfig) -> RunTrace:
    return run_many(problem, config, [config.seed], "clipped_sgd")[0]


def run_sgd(problem: StochasticProblem, config: OptimizerConfig) -> RunTrace:
    return run_many(problem, config, [config.seed], "sgd")[0]


def max_step_size(p: float, beta: float, c: float, L: float) -> float:
    """Largest admissible constant step ``(2p - beta - c) / (2L)`` for quantile clipping.

    Raises:
        ValueError: if ``beta`` or ``c`` is outside ``(0, 1)`` or the step would
            not be positive.
    """
    if not (0 < beta < 1 and 0 < c < 1):
        raise ValueError("beta and c must lie in (0, 1)")
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if not L > 0:
        raise ValueError("L must be positive")
    if beta + c >= 2 * p:
        raise ValueError(f"beta + c = {beta + c} leaves no positive step for p = {p}")
    return (2 * p - beta - c) / (2 * L)
