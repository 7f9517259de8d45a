"""Shared building blocks: parameter vectors, seeded RNG streams and schedules.

Parameter vectors are plain one-dimensional ``float64`` numpy arrays; the
helpers here only validate them at API boundaries.

Random numbers come from numpy's ``PCG64`` bit generator.  Every run owns a
root seed and derives one independent generator per named stream through
``numpy.random.SeedSequence(seed, spawn_key=(stream_index,))``, so data
sampling, DP noise and threshold estimation never share draws and each can be
replayed on its own.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_H_MIN = 1e-4


def as_param_vector(values, *, name: str = "x") -> np.ndarray:
    """Return ``values`` as a fresh finite 1-D float64 array.

    Raises:
        ValueError: if the input is not 1-D, is empty, or has non-finite entries.
    """
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


class Stream(enum.IntEnum):
    """Named random streams; the integer value is the spawn key."""

    DATA_SAMPLING = 0
    DP_NOISE = 1
    QUANTILE_ESTIMATION = 2


def rng_stream(seed: int, stream: Stream | str) -> np.random.Generator:
    """Build the generator for ``(seed, stream)``.

    Identical arguments always give a generator that replays the same draws.
    """
    if isinstance(stream, str):
        stream = Stream[stream.upper()]
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class RunStreams:
    """The three generators a single optimizer run draws from."""

    data: np.random.Generator
    noise: np.random.Generator
    quantile: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RunStreams":
        return cls(
            data=rng_stream(seed, Stream.DATA_SAMPLING),
            noise=rng_stream(seed, Stream.DP_NOISE),
            quantile=rng_stream(seed, Stream.QUANTILE_ESTIMATION),
        )


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``gamma0`` (constant) or ``gamma0 * (t+1)**(theta-1)`` (polynomial)."""

    kind: str = "constant"
    gamma0: float = 0.1
    theta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ValueError(f"unknown step schedule kind {self.kind!r}")
        if not (math.isfinite(self.gamma0) and self.gamma0 > 0):
            raise ValueError(f"gamma0 must be positive and finite, got {self.gamma0}")
        if not math.isfinite(self.theta):
            raise ValueError("theta must be finite")

    def at(self, t: int) -> float:
        if self.kind == "constant":
            return self.gamma0
        return self.gamma0 * (t + 1) ** (self.theta - 1.0)

    def values(self, T: int) -> np.ndarray:
        """Vector of the first ``T`` step sizes."""
        if self.kind == "constant":
            return np.full(T, self.gamma0)
        return self.gamma0 * np.arange(1, T + 1, dtype=np.float64) ** (self.theta - 1.0)


@dataclass(frozen=True)
class QuantileSchedule:
    """Quantile levels ``p_t = 1 - h_t``.

    The polynomial kind uses ``h_t = max(h_min, (1 - p0) * (t+1)**nu)`` with
    ``nu <= 0``, so ``p_t`` rises towards ``1 - h_min`` and never reaches 1.
    """

    kind: str = "constant"
    p0: float = 0.9
    nu: float = 0.0
    h_min: float = DEFAULT_H_MIN

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ValueError(f"unknown quantile schedule kind {self.kind!r}")
        if not 0.0 < self.p0 < 1.0:
            raise ValueError(f"p0 must lie in (0, 1), got {self.p0}")
        if not 0.0 < self.h_min < 1.0:
            raise ValueError(f"h_min must lie in (0, 1), got {self.h_min}")
        if self.kind == "polynomial" and not self.nu <= 0.0:
            raise ValueError(f"nu must be <= 0 for a non-decreasing quantile, got {self.nu}")

    def h_at(self, t: int) -> float:
        if self.kind == "constant":
            return 1.0 - self.p0
        return max(self.h_min, (1.0 - self.p0) * (t + 1) ** self.nu)

    def at(self, t: int) -> float:
        if self.kind == "constant":
            return self.p0
        return 1.0 - self.h_at(t)

    def h_values(self, T: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(T, 1.0 - self.p0)
        h = (1.0 - self.p0) * np.arange(1, T + 1, dtype=np.float64) ** self.nu
        return np.maximum(h, self.h_min)


def step_at(schedule: StepSchedule, t: int) -> float:
    """Step size at iteration ``t`` (``t >= 0``)."""
    if t < 0:
        raise ValueError(f"iteration index must be non-negative, got {t}")
    return schedule.at(t)


def quantile_at(schedule: QuantileSchedule, t: int) -> float:
    """Quantile level at iteration ``t`` (``t >= 0``)."""
    if t < 0:
        raise ValueError(f"iteration index must be non-negative, got {t}")
    return schedule.at(t)


def schedule_exponents(q: float) -> tuple[float, float]:
    """Step and quantile exponents that balance the time-varying bound.

    Returns ``(theta, nu)`` such that ``gamma_t ~ t**(theta-1)`` and
    ``1 - p_t ~ t**nu``.

    Raises:
        ValueError: if ``q`` is outside ``(1, 2]``.
    """
    if not 1.0 < q <= 2.0:
        raise ValueError(f"q must lie in (1, 2], got {q}")
    # (1 - 1/q)/(2 - 1/q) and -1/(4 - 2/q), multiplied through by q to avoid
    # rounding 1/q first
    theta = (q - 1.0) / (2.0 * q - 1.0)
    nu = -q / (4.0 * q - 2.0)
    return theta, nu


def balanced_schedules(q: float, gamma0: float, p0: float,
                       h_min: float = DEFAULT_H_MIN) -> tuple[StepSchedule, QuantileSchedule]:
    """Polynomial step and quantile schedules using ``schedule_exponents(q)``."""
    theta, nu = schedule_exponents(q)
    return (StepSchedule("polynomial", gamma0, theta),
            QuantileSchedule("polynomial", p0, nu, h_min))
