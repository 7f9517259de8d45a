"""Synthetic stochastic objectives with known smoothness and noise constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .core import as_param_vector


class CalibrationError(RuntimeError):
    """The q-th noise moment could not be estimated reliably.

    The last two checkpoint estimates are kept on the exception so callers can
    still inspect them.
    """

    def __init__(self, message: str, estimates: tuple[float, ...] = ()):
        super().__init__(message)
        self.estimates = estimates


# ---------------------------------------------------------------------------
# Additive noise models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianNoise:
    sigma: float

    kind = "gaussian"

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        return self.sigma * rng.standard_normal(shape)

    def moment_exists(self, q: float) -> bool:
        return True

    def sigma_q(self, q: float, dim: int) -> float | None:
        # (E ||sigma * N(0, I_d)||^q)^(1/q) via the chi distribution moments.
        if self.sigma == 0:
            return 0.0
        log_m = 0.5 * q * math.log(2.0) + gammaln(0.5 * (dim + q)) - gammaln(0.5 * dim)
        return self.sigma * math.exp(log_m / q)


@dataclass(frozen=True)
class StudentTNoise:
    dof: float
    scale: float = 1.0

    kind = "student_t"

    def sample(self, rng, shape):
        return self.scale * rng.standard_t(self.dof, shape)

    def moment_exists(self, q):
        return q < self.dof

    def sigma_q(self, q, dim):
        if q == 2 and self.dof > 2:
            return self.scale * math.sqrt(dim * self.dof / (self.dof - 2.0))
        return None


@dataclass(frozen=True)
class ParetoNoise:
    """Symmetrised Lomax noise: random sign times ``scale * Lomax(tail_index)``."""

    tail_index: float
    scale: float = 1.0

    kind = "pareto_symmetric"

    def sample(self, rng, shape):
        mag = rng.pareto(self.tail_index, shape)
        sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
        return self.scale * sign * mag

    def moment_exists(self, q):
        return q < self.tail_index

    def sigma_q(self, q, dim):
        a = self.tail_index
        if q == 2 and a > 2:
            return self.scale * math.sqrt(dim * 2.0 / ((a - 1.0) * (a - 2.0)))
        return None


NOISE_MODELS = {
    "gaussian": GaussianNoise,
    "student_t": StudentTNoise,
    "pareto_symmetric": ParetoNoise,
}


def make_noise(spec: dict | None):
    """Build a noise model from ``{"kind": ..., **params}``; ``None`` means no noise."""
    if spec is None:
        return None
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind not in NOISE_MODELS:
        raise ValueError(f"unknown noise kind {kind!r}")
    return NOISE_MODELS[kind](**spec)


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------

class StochasticProblem:
    """Base class for objectives ``f(x) = E[f_xi(x)]``.

    Subclasses provide ``dim``, ``L``, ``q``, ``sigma_q``, ``f_inf``,
    ``x_star`` and the methods ``f``, ``grad``, ``draw_xi`` and ``grad_at``.
    ``sigma_q`` may be ``None`` until :func:`calibrate_sigma_q` fills it in.
    """

    dim: int
    L: float
    q: float
    sigma_q: float | None
    f_inf: float
    xi_width: int  # floats per draw of xi

    def f(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def draw_xi(self, rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
        """Draw data indices ``xi`` with leading shape ``shape``.

        ``xi`` does not depend on ``x``, which lets the optimizer pre-draw
        blocks of them.
        """
        raise NotImplementedError

    def grad_at(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Stochastic gradients for ``x`` of shape ``(..., dim)`` and ``xi`` of
        leading shape ``(..., n)``; returns ``(..., n, dim)``."""
        raise NotImplementedError

    def grad_samples(self, x: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` independent stochastic gradients at ``x``, shape ``(n, dim)``."""
        return self.grad_at(x, self.draw_xi(rng, (n,)))

    def grad_sample(self, x, rng):
        return self.grad_samples(x, rng, 1)[0]

    def moment_exists(self, q: float) -> bool:
        return True

    def with_sigma_q(self, sigma_q: float):
        return replace(self, sigma_q=float(sigma_q))

    def require_sigma_q(self) -> float:
        if self.sigma_q is None:
            raise ValueError(
                f"{type(self).__name__} has no sigma_q; run calibrate_sigma_q first")
        return self.sigma_q


@dataclass(frozen=True, eq=False)
class QuadraticProblem(StochasticProblem):
    """``f(x) = 0.5 (x - x_star)^T diag(curvature) (x - x_star)`` with additive noise."""

    x_star: np.ndarray
    curvature: np.ndarray
    noise: GaussianNoise | StudentTNoise | ParetoNoise | None = None
    q: float = 2.0
    sigma_q: float | None = None
    f_inf: float = field(default=0.0, init=False)

    def __post_init__(self):
        x_star = as_param_vector(self.x_star, name="x_star")
        curv = np.broadcast_to(np.asarray(self.curvature, dtype=np.float64),
                               x_star.shape).copy()
        if np.any(curv < 0) or not np.all(np.isfinite(curv)):
            raise ValueError("curvature entries must be finite and non-negative")
        if curv.max() <= 0:
            raise ValueError("at least one curvature entry must be positive")
        if not 1.0 < self.q <= 2.0:
            raise ValueError(f"q must lie in (1, 2], got {self.q}")
        object.__setattr__(self, "x_star", x_star)
        object.__setattr__(self, "curvature", curv)
        if self.sigma_q is None:
            if self.noise is None:
                object.__setattr__(self, "sigma_q", 0.0)
            else:
                object.__setattr__(self, "sigma_q", self.noise.sigma_q(self.q, x_star.size))

    @classmethod
    def isotropic(cls, dim: int, sigma: float = 1.0, curvature: float = 1.0,
                  x_star: float = 0.0, **kw) -> "QuadraticProblem":
        """Diagonal problem with equal curvature; ``noise`` in ``kw`` replaces the Gaussian default."""
        noise = kw.pop("noise", GaussianNoise(sigma) if sigma > 0 else None)
        return cls(np.full(dim, float(x_star)), np.full(dim, float(curvature)), noise, **kw)

    @property
    def dim(self) -> int:
        return self.x_star.size

    @property
    def L(self) -> float:
        return float(self.curvature.max())

    def f(self, x):
        d = np.asarray(x) - self.x_star
        val = 0.5 * np.sum(self.curvature * d * d, axis=-1)
        return float(val) if val.ndim == 0 else val

    def grad(self, x):
        return self.curvature * (np.asarray(x) - self.x_star)

    def draw_xi(self, rng, shape):
        shape = tuple(shape) + (self.dim,)
        if self.noise is None:
            return np.zeros(shape)
        return self.noise.sample(rng, shape)

    def grad_at(self, x, xi):
        return self.grad(x)[..., None, :] + xi

    def moment_exists(self, q):
        return self.noise is None or self.noise.moment_exists(q)

    @property
    def xi_width(self) -> int:
        return self.dim


@dataclass(frozen=True, eq=False)
class TwoPointExample(StochasticProblem):
    """One-dimensional mixture ``f_xi(x) = 0.5 (x + r)^2`` w.p. ``omega``, else ``0.5 x^2``.

    The mean objective has gradient ``x + r * omega`` and minimiser
    ``-r * omega``.  Clipping makes the method's expected fixed point differ
    from that minimiser.
    """

    r: float = 2.0
    omega: float = 0.75
    q: float = 2.0
    sigma_q: float | None = None

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"r must be positive, got {self.r}")
        if not 0.5 < self.omega < 1.0:
            raise ValueError(f"omega must lie in (1/2, 1), got {self.omega}")
        if not 1.0 < self.q <= 2.0:
            raise ValueError(f"q must lie in (1, 2], got {self.q}")
        if self.sigma_q is None:
            w, q = self.omega, self.q
            # |noise| = r(1 - w) w.p. w and r w w.p. 1 - w.
            s = self.r * (w * (1 - w) ** q + (1 - w) * w ** q) ** (1.0 / q)
            object.__setattr__(self, "sigma_q", s)

    dim = 1
    L = 1.0
    xi_width = 1

    @property
    def f_inf(self) -> float:
        return 0.5 * self.r ** 2 * self.omega * (1.0 - self.omega)

    @property
    def x_star(self) -> np.ndarray:
        return np.array([-self.r * self.omega])

    def f(self, x):
        x = np.asarray(x, dtype=np.float64)[..., 0]
        val = 0.5 * (self.omega * (x + self.r) ** 2 + (1.0 - self.omega) * x * x)
        return float(val) if val.ndim == 0 else val

    def grad(self, x):
        return np.asarray(x, dtype=np.float64) + self.r * self.omega

    def atoms(self, x) -> tuple[float, float]:
        """Stochastic gradient values ``(x + r, x)``, taken w.p. ``(omega, 1 - omega)``."""
        x = float(np.asarray(x).reshape(-1)[0])
        return x + self.r, x

    def draw_xi(self, rng, shape):
        return rng.random(shape) < self.omega

    def grad_at(self, x, xi):
        x = np.asarray(x, dtype=np.float64)
        return x[..., None, :] + np.where(xi, self.r, 0.0)[..., None]


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def grad_sample(problem: StochasticProblem, x, rng) -> np.ndarray:
    return problem.grad_sample(as_param_vector(x), rng)


def grad_exact(problem: StochasticProblem, x) -> np.ndarray:
    return problem.grad(as_param_vector(x))


def finite_diff_grad(problem: StochasticProblem, x, epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``problem.f`` at ``x``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    x = as_param_vector(x)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = epsilon
        out[i] = (problem.f(x + e) - problem.f(x - e)) / (2.0 * epsilon)
    return out


def calibrate_sigma_q(problem: StochasticProblem, probe_points, q: float,
                      n_samples: int, rng: np.random.Generator,
                      drift_tol: float = 0.05) -> float:
    """Empirical ``max_x (E ||grad_xi(x) - grad(x)||^q)^(1/q)`` over probe points.

    The running estimate is checked at the doubling checkpoints ``n/2`` and
    ``n``; a relative change above ``drift_tol`` means the sample moment has
    not settled.

    Raises:
        CalibrationError: if the q-th moment is infinite for the noise model,
            or the estimate is still drifting at the last checkpoint.
    """
    if n_samples < 1000:
        raise ValueError(f"n_samples must be at least 1000, got {n_samples}")
    if not problem.moment_exists(q):
        raise CalibrationError(f"noise has no finite moment of order {q}")
    best = 0.0
    half = n_samples // 2
    for x in probe_points:
        x = as_param_vector(x)
        dev = problem.grad_samples(x, rng, n_samples) - problem.grad(x)
        pw = np.linalg.norm(dev, axis=1) ** q
        early = pw[:half].mean() ** (1.0 / q)
        late = pw.mean() ** (1.0 / q)
        if late > 0 and abs(late - early) > drift_tol * late:
            raise CalibrationError(
                f"sigma_q estimate drifted from {early:.4g} to {late:.4g} "
                f"between the last two checkpoints", (early, late))
        best = max(best, late)
    return best
