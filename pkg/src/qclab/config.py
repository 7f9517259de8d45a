"""Experiment configuration files.

A config is a JSON object with the sections ``problem``, ``optimizer`` and
optionally ``dp``, ``analysis`` and ``seeds``.  Unknown keys are rejected and
every error names the offending field and, when it can be located, the line
of the file it came from.

Example::

    {
      "problem": {"kind": "quadratic", "dim": 2, "noise": {"kind": "gaussian", "sigma": 1.0}},
      "optimizer": {
        "algorithm": "qc_sgd", "T": 1000, "x0": [3.0, 3.0],
        "steps": {"kind": "constant", "gamma0": 0.1},
        "clip": {"mode": "quantile", "quantiles": {"kind": "constant", "p0": 0.9}}
      },
      "analysis": {"beta": 0.2, "c": 0.2},
      "seeds": [0, 1, 2]
    }
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clipping import DEFAULT_M, ClipConfig
from .core import DEFAULT_H_MIN, QuantileSchedule, StepSchedule
from .optimizer import ALGORITHMS, OptimizerConfig
from .privacy import DEFAULT_C, DPConfig
from .problems import QuadraticProblem, StochasticProblem, TwoPointExample, make_noise


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path, ``line`` 1-based or None."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f" (line {line})" if line else ""
        super().__init__(f"{field}{where}: {message}")


_SCHEMA = {
    "": {"problem", "optimizer", "dp", "analysis", "seeds"},
    "problem": {"kind", "dim", "x_star", "curvature", "noise", "q", "sigma_q", "r", "omega"},
    "problem.noise": {"kind", "sigma", "dof", "scale", "tail_index"},
    "optimizer": {"algorithm", "T", "x0", "trace_every", "steps", "clip"},
    "optimizer.steps": {"kind", "gamma0", "theta"},
    "optimizer.clip": {"mode", "quantiles", "tau", "m", "exact"},
    "optimizer.clip.quantiles": {"kind", "p0", "nu", "h_min"},
    "dp": {"B", "epsilon", "delta", "T", "C", "sigma_dp"},
    "analysis": {"beta", "c"},
}


@dataclass(frozen=True, eq=False)
class Experiment:
    """A fully validated config."""

    problem: StochasticProblem
    optimizer: OptimizerConfig
    algorithm: str
    dp: DPConfig | None
    beta: float | None
    c: float
    seeds: tuple[int, ...]
    raw: dict

    @property
    def batch(self) -> int:
        return self.dp.B if self.dp else 1

    @property
    def noise_multiplier(self) -> float:
        return self.dp.sigma_dp if self.dp else 0.0

    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of a config."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Reader:
    def __init__(self, text: str | None):
        self.text = text

    def fail(self, path: str, message: str):
        key = path.rsplit(".", 1)[-1] if path else ""
        raise ConfigError(path or "<root>", message, _line_of(self.text, key))

    def section(self, raw, path: str) -> dict:
        if not isinstance(raw, dict):
            self.fail(path, f"expected an object, got {type(raw).__name__}")
        for key in raw:
            if key not in _SCHEMA[path]:
                allowed = ", ".join(sorted(_SCHEMA[path]))
                full = f"{path}.{key}" if path else key
                raise ConfigError(full, f"unknown key (allowed: {allowed})",
                                  _line_of(self.text, key))
        return raw

    def number(self, sec: dict, path: str, key: str, default=None, *, integer=False):
        full = f"{path}.{key}" if path else key
        if key not in sec:
            if default is None:
                self.fail(full, "required field is missing")
            return default
        v = sec[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(full, f"expected a number, got {json.dumps(v)}")
        if integer and (not float(v).is_integer()):
            self.fail(full, f"expected an integer, got {v}")
        return int(v) if integer else float(v)

    def vector(self, sec: dict, path: str, key: str, dim: int, default=None) -> np.ndarray:
        full = f"{path}.{key}"
        v = sec.get(key, default)
        if v is None:
            self.fail(full, "required field is missing")
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return np.full(dim, float(v))
        if not (isinstance(v, list) and all(
                isinstance(e, (int, float)) and not isinstance(e, bool) for e in v)):
            self.fail(full, "expected a number or a list of numbers")
        if len(v) != dim:
            self.fail(full, f"expected {dim} entries, got {len(v)}")
        return np.asarray(v, dtype=np.float64)

    def build(self, path: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, TypeError) as exc:
            self.fail(path, str(exc))


def _problem(rd: _Reader, raw) -> StochasticProblem:
    path = "problem"
    sec = rd.section(raw, path)
    kind = sec.get("kind")
    q = rd.number(sec, path, "q", 2.0)
    sigma_q = rd.number(sec, path, "sigma_q", None) if sec.get("sigma_q") is not None else None
    if kind == "quadratic":
        dim = rd.number(sec, path, "dim", integer=True)
        if dim < 1:
            rd.fail(f"{path}.dim", f"must be at least 1, got {dim}")
        noise = None
        if sec.get("noise") is not None:
            nsec = rd.section(sec["noise"], "problem.noise")
            noise = rd.build("problem.noise", make_noise, dict(nsec))
        return rd.build(path, QuadraticProblem,
                        x_star=rd.vector(sec, path, "x_star", dim, 0.0),
                        curvature=rd.vector(sec, path, "curvature", dim, 1.0),
                        noise=noise, q=q, sigma_q=sigma_q)
    if kind == "two_point":
        for key in ("dim", "x_star", "curvature", "noise"):
            if key in sec:
                rd.fail(f"{path}.{key}", "not used by the two_point problem")
        return rd.build(path, TwoPointExample, r=rd.number(sec, path, "r", 2.0),
                        omega=rd.number(sec, path, "omega", 0.75), q=q, sigma_q=sigma_q)
    rd.fail(f"{path}.kind", f"expected 'quadratic' or 'two_point', got {json.dumps(kind)}")


def _optimizer(rd: _Reader, raw, dim: int) -> tuple[OptimizerConfig, str]:
    path = "optimizer"
    sec = rd.section(raw, path)
    algorithm = sec.get("algorithm", "qc_sgd")
    if algorithm not in ALGORITHMS:
        rd.fail(f"{path}.algorithm", f"expected one of {list(ALGORITHMS)}, got {algorithm!r}")

    spath = "optimizer.steps"
    ssec = rd.section(sec.get("steps", {}), spath)
    steps = rd.build(spath, StepSchedule, ssec.get("kind", "constant"),
                     rd.number(ssec, spath, "gamma0"), rd.number(ssec, spath, "theta", 1.0))

    cpath = "optimizer.clip"
    csec = rd.section(sec.get("clip", {"mode": "none"}), cpath)
    quantiles = None
    if csec.get("quantiles") is not None:
        qpath = "optimizer.clip.quantiles"
        qsec = rd.section(csec["quantiles"], qpath)
        quantiles = rd.build(qpath, QuantileSchedule, qsec.get("kind", "constant"),
                             rd.number(qsec, qpath, "p0"), rd.number(qsec, qpath, "nu", 0.0),
                             rd.number(qsec, qpath, "h_min", DEFAULT_H_MIN))
    exact = csec.get("exact", False)
    if not isinstance(exact, bool):
        rd.fail(f"{cpath}.exact", "expected true or false")
    tau = rd.number(csec, cpath, "tau", None) if csec.get("tau") is not None else None
    clip = rd.build(cpath, ClipConfig, csec.get("mode", "quantile"), quantiles, tau,
                    rd.number(csec, cpath, "m", DEFAULT_M, integer=True), exact)

    T = rd.number(sec, path, "T", integer=True)
    trace_every = rd.number(sec, path, "trace_every", 1, integer=True)
    x0 = rd.vector(sec, path, "x0", dim)
    cfg = rd.build(path, OptimizerConfig, clip, steps, T, x0, 0, trace_every)
    return cfg, algorithm


def _dp(rd: _Reader, raw, T: int) -> DPConfig:
    path = "dp"
    sec = rd.section(raw, path)
    sigma = sec.get("sigma_dp")
    if sigma is not None:
        sigma = rd.number(sec, path, "sigma_dp")
    return rd.build(path, DPConfig,
                    B=rd.number(sec, path, "B", 1, integer=True),
                    epsilon=rd.number(sec, path, "epsilon", 1.0),
                    delta=rd.number(sec, path, "delta", 1e-5),
                    T=rd.number(sec, path, "T", T, integer=True),
                    C=rd.number(sec, path, "C", DEFAULT_C),
                    override_sigma_dp=sigma)


def parse_config(raw: dict, text: str | None = None) -> Experiment:
    """Validate a decoded config; ``text`` is the source used for line numbers."""
    rd = _Reader(text)
    rd.section(raw, "")
    for key in ("problem", "optimizer"):
        if key not in raw:
            raise ConfigError(key, "required section is missing")
    problem = _problem(rd, raw["problem"])
    opt, algorithm = _optimizer(rd, raw["optimizer"], problem.dim)

    dp = None
    if raw.get("dp") is not None:
        if algorithm != "dp_qc_sgd":
            rd.fail("dp", f"only valid with algorithm 'dp_qc_sgd', not {algorithm!r}")
        dp = _dp(rd, raw["dp"], opt.T)
    elif algorithm == "dp_qc_sgd":
        dp = DPConfig(T=opt.T)

    asec = rd.section(raw.get("analysis", {}), "analysis")
    beta = rd.number(asec, "analysis", "beta", None) if "beta" in asec else None
    c = rd.number(asec, "analysis", "c", 1.0)

    seeds = raw.get("seeds", [0])
    if not (isinstance(seeds, list) and seeds and all(
            isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)):
        rd.fail("seeds", "expected a non-empty list of non-negative integers")
    return Experiment(problem, opt, algorithm, dp, beta, c, tuple(seeds), copy.deepcopy(raw))


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(k, "duplicate key")
        out[k] = v
    return out


def load_config(path: str | Path) -> Experiment:
    """Read and validate a JSON config file.

    Raises:
        ConfigError: on unreadable files, malformed JSON or invalid fields.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", exc.msg, exc.lineno) from None
    except ConfigError as exc:
        raise ConfigError(exc.field, "duplicate key", _line_of(text, exc.field)) from None
    return parse_config(raw, text)
