"""Command-line interface: ``qclab run | sweep | verify | schedule``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 divergence,
3 a failed verification suite.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, analysis
from .config import ConfigError, Experiment, load_config, parse_config
from .core import balanced_schedules, schedule_exponents
from .optimizer import TRACE_COLUMNS, DivergenceError, RunTrace, run_many

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3
JOBS_ENV = "QCLAB_JOBS"
SWEEP_AXES = ("gamma", "p", "B", "sigma_dp", "T")


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(v) -> str:
    """Round-trip float formatting (17 significant digits); ints stay ints."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if v is None:
        return ""
    return format(float(v), ".17g")


def trace_csv(trace: RunTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    cols = [trace.columns[c] for c in TRACE_COLUMNS]
    for i in range(len(trace)):
        w.writerow([fmt(int(cols[0][i]))] + [fmt(col[i]) for col in cols[1:]])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def dump_json(obj) -> str:
    return json.dumps(_json_value(obj), indent=2, sort_keys=True) + "\n"


def _metadata() -> dict:
    return {"timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "version": __version__}


# ---------------------------------------------------------------------------
# Running experiments
# ---------------------------------------------------------------------------

def _run_chunk(exp: Experiment, seeds) -> list[RunTrace]:
    return run_many(exp.problem, exp.optimizer, seeds, exp.algorithm,
                    batch=exp.batch, noise_multiplier=exp.noise_multiplier)


def run_experiment(exp: Experiment, seeds, jobs: int = 1) -> list[RunTrace]:
    """Run every seed; with ``jobs > 1`` seeds are split across processes.

    Each seed owns its random streams, so results do not depend on ``jobs``.
    """
    seeds = list(seeds)
    jobs = max(1, min(jobs, len(seeds)))
    if jobs == 1:
        return _run_chunk(exp, seeds)
    chunks = [seeds[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(jobs) as pool:
        parts = list(pool.map(_run_chunk, [exp] * jobs, chunks))
    by_seed = {t.seed: t for part in parts for t in part}
    return [by_seed[s] for s in seeds]


def bound_terms(exp: Experiment) -> tuple[analysis.BoundTerms | None, str]:
    """Constant-parameter bound for ``exp``, or ``None`` with the reason it does not apply."""
    opt = exp.optimizer
    if exp.beta is None:
        return None, "analysis.beta not set"
    if exp.algorithm not in ("qc_sgd", "dp_qc_sgd"):
        return None, f"no bound for {exp.algorithm}"
    if opt.steps.kind != "constant" or opt.clip.quantiles.kind != "constant":
        return None, "bound is evaluated for constant schedules only"
    try:
        inputs = analysis.BoundInputs.for_problem(
            exp.problem, opt.x0, opt.clip.quantiles.p0, exp.beta, exp.c, T=opt.T,
            B=exp.batch, sigma_dp=exp.noise_multiplier)
        if exp.algorithm == "qc_sgd":
            return analysis.qc_sgd_constant_bound(inputs, opt.steps.gamma0), ""
        return analysis.dp_qc_sgd_constant_bound(inputs, opt.steps.gamma0), ""
    except ValueError as exc:
        return None, str(exc)


def summarize(exp: Experiment, traces: list[RunTrace]) -> dict:
    per_seed = [{
        "seed": t.seed,
        "stationarity": analysis.stationarity_measure(t, exp.c),
        "min_grad_sq": t.min_grad_sq,
        "tail_grad_norm_mean": t.tail_grad_norm_mean,
        "f_final": t.f_final,
    } for t in traces]
    means, stderrs = {}, {}
    for key in ("stationarity", "min_grad_sq", "tail_grad_norm_mean", "f_final"):
        means[key], stderrs[key] = analysis.mean_stderr([r[key] for r in per_seed])
    terms, why = bound_terms(exp)
    return {
        "config_hash": exp.config_hash(),
        "algorithm": exp.algorithm,
        "c": exp.c,
        "sigma_dp": exp.noise_multiplier,
        "per_seed": per_seed,
        "mean": means,
        "stderr": stderrs,
        "bound": terms._asdict() if terms else {"unavailable": why},
    }


def cmd_run(exp: Experiment, out: Path, seeds=None, jobs: int = 1) -> dict:
    """Run ``exp`` and write one trace CSV per seed plus ``summary.json`` into ``out``."""
    seeds = list(seeds) if seeds is not None else list(exp.seeds)
    traces = run_experiment(exp, seeds, jobs)
    for t in traces:
        atomic_write(out / f"trace_seed{t.seed}.csv", trace_csv(t))
    summary = summarize(exp, traces)
    atomic_write(out / "summary.json", dump_json({**summary, "metadata": _metadata()}))
    return summary


def _with_axis(exp: Experiment, axis: str, value: float) -> Experiment:
    raw = json.loads(json.dumps(exp.raw))
    opt = raw["optimizer"]
    if axis == "gamma":
        opt.setdefault("steps", {})["gamma0"] = value
    elif axis == "p":
        opt.setdefault("clip", {}).setdefault("quantiles", {})["p0"] = value
    elif axis == "T":
        if not float(value).is_integer():
            raise ConfigError("sweep.values", f"T must be an integer, got {value}")
        opt["T"] = int(value)
        if isinstance(raw.get("dp"), dict) and "T" in raw["dp"]:
            raw["dp"]["T"] = int(value)
    elif axis in ("B", "sigma_dp"):
        if exp.algorithm != "dp_qc_sgd":
            raise ConfigError("sweep.axis", f"axis {axis!r} needs algorithm 'dp_qc_sgd'")
        if axis == "B" and not float(value).is_integer():
            raise ConfigError("sweep.values", f"B must be an integer, got {value}")
        raw.setdefault("dp", {})[axis] = int(value) if axis == "B" else value
    else:
        raise ConfigError("sweep.axis", f"expected one of {list(SWEEP_AXES)}, got {axis!r}")
    return parse_config(raw)


SWEEP_COLUMNS = ("axis", "value", "n_seeds", "stationarity_mean", "stationarity_stderr",
                 "min_grad_sq_mean", "f_final_mean", "term1", "term2", "term3",
                 "bound_total")


def cmd_sweep(exp: Experiment, axis: str, values, out: Path, seeds=None,
              jobs: int = 1) -> list[dict]:
    """Run ``exp`` for each value of ``axis`` and write ``sweep_<axis>.csv``."""
    values = list(values)
    if not values:
        raise ConfigError("sweep.values", "empty list of values")
    seeds = list(seeds) if seeds is not None else list(exp.seeds)
    variants = [_with_axis(exp, axis, v) for v in values]
    rows = []
    for v, var in zip(values, variants):
        s = summarize(var, run_experiment(var, seeds, jobs))
        b = s["bound"]
        rows.append({
            "axis": axis, "value": v, "n_seeds": len(seeds),
            "stationarity_mean": s["mean"]["stationarity"],
            "stationarity_stderr": s["stderr"]["stationarity"],
            "min_grad_sq_mean": s["mean"]["min_grad_sq"],
            "f_final_mean": s["mean"]["f_final"],
            **{k: b.get(k if k != "bound_total" else "total") for k in
               ("term1", "term2", "term3", "bound_total")},
        })
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r["axis"]] + [fmt(r[c]) for c in SWEEP_COLUMNS[1:]])
    atomic_write(out / f"sweep_{axis}.csv", buf.getvalue())
    atomic_write(out / f"sweep_{axis}.json", dump_json({
        "config_hash": exp.config_hash(), "axis": axis, "rows": rows,
        "metadata": _metadata()}))
    return rows


def cmd_verify(suite: str, out: Path | None = None, stream=None) -> bool:
    """Run a verification suite, print one line per check and write a JSON report."""
    from .verify import run_suite
    stream = stream or sys.stdout
    start = time.perf_counter()
    checks = run_suite(suite)
    for c in checks:
        print(c.line(), file=stream)
    ok = all(c.passed for c in checks)
    n_fail = sum(not c.passed for c in checks)
    print(f"suite {suite}: {'PASS' if ok else 'FAIL'} ({len(checks) - n_fail}/{len(checks)})",
          file=stream)
    if out is not None:
        meta = {**_metadata(), "elapsed_s": round(time.perf_counter() - start, 3)}
        atomic_write(out / f"verify_{suite}.json", dump_json({
            "suite": suite, "passed": ok, "checks": [c.as_dict() for c in checks],
            "metadata": meta}))
    return ok


def schedule_report(q: float, gamma0: float = 1.0, p0: float = 0.5) -> str:
    theta, nu = schedule_exponents(q)
    steps, quantiles = balanced_schedules(q, gamma0, p0)
    h0 = 1.0 - p0
    lines = [
        f"q = {q:g}",
        f"theta = {theta:.17g}",
        f"nu = {nu:.17g}",
        f"gamma_t = {gamma0:g} * (t+1)^{theta - 1:.6g}",
        f"p_t = 1 - {h0:g} * (t+1)^{nu:.6g}  (h_t floored at {quantiles.h_min:g})",
    ]
    for t in (0, 9, 99, 999, 9999):
        lines.append(f"  t={t:<5d} gamma={steps.at(t):.6g} p={quantiles.at(t):.6g}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be non-negative integers")
    return seeds


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _values(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qclab", description="Quantile-clipped SGD experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, type=Path, help="JSON experiment config")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--seeds", type=_positive_int, metavar="N", help="use seeds 0..N-1")
        g.add_argument("--seed-list", type=_seed_list, metavar="S1,S2,...")
        p.add_argument("--jobs", type=_positive_int, default=_default_jobs(),
                       help=f"worker processes (default: ${JOBS_ENV} or 1)")

    common(sub.add_parser("run", help="run one configuration"))
    sw = sub.add_parser("sweep", help="run a configuration across values of one parameter")
    common(sw)
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, type=_values, help="comma-separated values")

    ve = sub.add_parser("verify", help="run a built-in verification suite")
    ve.add_argument("suite", help="lemma1, lemma2, theorem1, theorem2, bias_example, "
                                  "schedule, dp_noise or all")
    ve.add_argument("--out", type=Path, default=None)

    sc = sub.add_parser("schedule", help="print the balanced schedule exponents for q")
    sc.add_argument("q", type=float)
    sc.add_argument("--gamma0", type=float, default=1.0)
    sc.add_argument("--p0", type=float, default=0.5)
    return ap


def _seeds_from(args, exp: Experiment):
    if args.seeds is not None:
        return list(range(args.seeds))
    if args.seed_list is not None:
        return args.seed_list
    return list(exp.seeds)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "schedule":
            print(schedule_report(args.q, args.gamma0, args.p0))
            return EXIT_OK
        if args.command == "verify":
            from .verify import SUITES
            if args.suite != "all" and args.suite not in SUITES:
                raise ConfigError("suite", f"unknown suite {args.suite!r}")
            return EXIT_OK if cmd_verify(args.suite, args.out) else EXIT_VERIFY
        exp = load_config(args.config)
        seeds = _seeds_from(args, exp)
        if args.command == "run":
            s = cmd_run(exp, args.out, seeds, args.jobs)
            print(f"stationarity mean={s['mean']['stationarity']:.6g} "
                  f"stderr={s['stderr']['stationarity']:.3g} over {len(seeds)} seeds")
        else:
            cmd_sweep(exp, args.axis, args.values, args.out, seeds, args.jobs)
            print(f"wrote {args.out / f'sweep_{args.axis}.csv'}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
