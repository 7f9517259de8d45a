"""The ten acceptance criteria, one test each.

Every test records a PASS/FAIL line that is printed in the pytest terminal
summary.  Running this file directly prints the same lines.
"""

import subprocess
import sys
import time
from pathlib import Path

import pytest

from qclab import verify
from qclab.analysis import fixed_point_two_point, unit_clip_fixed_point
from qclab.core import schedule_exponents
from qclab.problems import TwoPointExample

ROOT = Path(__file__).resolve().parents[1]

# Exact-quantile expected update for (r=2, omega=0.75, p=0.5) is x + 2 left of
# -2 and 0.5 (x + 2) on (-2, -1), so the root is -2 where |grad f| = 0.5.
ORACLE_ROOT = -2.0
ORACLE_GRAD_AT_ROOT = 0.5


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def _summary(checks, elapsed, limit):
    failed = [c.name for c in checks if not c.passed]
    worst = min(checks, key=lambda c: c.margin)
    text = (f"{len(checks) - len(failed)}/{len(checks)} checks, {elapsed:.1f}s "
            f"(limit {limit}s), smallest margin {worst.margin:.3g} at {worst.name}")
    if failed:
        text += f"; failed: {', '.join(failed)}"
    return text


def _suite_criterion(record, number, suite, limit, expected_count=None):
    checks, elapsed = _timed(suite)
    ok = all(c.passed for c in checks) and elapsed < limit
    if expected_count is not None:
        ok &= len(checks) == expected_count
    record(number, ok, _summary(checks, elapsed, limit))
    for c in checks:
        assert c.passed, c.line()
    assert elapsed < limit
    if expected_count is not None:
        assert len(checks) == expected_count
    return checks


def test_criterion_01_threshold_and_bias_bounds(record_criterion):
    checks = _suite_criterion(record_criterion, 1, verify.suite_threshold_bias, 60, expected_count=4)
    # 20 points x 3 quantile levels per problem
    assert all(c.measured == 60 for c in checks)


def test_criterion_02_one_step_recursion(record_criterion):
    _suite_criterion(record_criterion, 2, verify.suite_one_step_descent, 120, expected_count=20)


def test_criterion_03_constant_step_bound(record_criterion):
    checks = _suite_criterion(record_criterion, 3, verify.suite_constant_step_bound, 120)
    assert sum(c.name.startswith("constant_step.p") for c in checks) == 3
    assert verify.N_SEEDS >= 20 and verify.CONSTANT_STEP_T == 10_000


def test_criterion_04_irreducible_bias(record_criterion):
    checks = _suite_criterion(record_criterion, 4, verify.suite_bias_example, 180)
    root = fixed_point_two_point(TwoPointExample(2.0, 0.75), 0.5)
    assert root == pytest.approx(ORACLE_ROOT, abs=1e-9)
    assert abs(TwoPointExample(2.0, 0.75).grad([root])[0]) == pytest.approx(
        ORACLE_GRAD_AT_ROOT, abs=1e-9)
    assert unit_clip_fixed_point(0.75) == -3.0
    floors = [c for c in checks if c.name.startswith("bias.plateau_floor.")]
    assert len(floors) == 3
    assert verify.BIAS_T == 100_000 and verify.BIAS_GAMMAS == (1e-1, 1e-2, 1e-3)


def test_criterion_05_schedule_fix(record_criterion):
    _suite_criterion(record_criterion, 5, verify.suite_schedule, 300)
    assert verify.SCHEDULE_TS == (1_000, 10_000, 100_000)


def test_criterion_06_dp_reduction_and_noise(record_criterion):
    _suite_criterion(record_criterion, 6, verify.suite_dp_noise, 60)
    assert verify.DP_NOISE_DRAWS == 10_000 and verify.DP_NOISE_RTOL == 0.05


def test_criterion_07_private_bound(record_criterion):
    _suite_criterion(record_criterion, 7, verify.suite_private_bound, 180,
                     expected_count=3)
    configs = set(verify.PRIVATE_CONFIGS)
    assert {B for B, _ in configs} == {1, 16} and {s for _, s in configs} == {0.5, 2.0}
    assert verify.PRIVATE_SLACK == 2.0


def test_criterion_08_exponents(record_criterion):
    theta, nu = schedule_exponents(2.0)
    # the returned pair is exact; theta - 1 itself is one float subtraction away
    step_exp_ok = abs((theta - 1) - (-2 / 3)) <= 2 ** -52
    ok = theta == 1 / 3 and nu == -1 / 3 and step_exp_ok
    record_criterion(8, ok, f"theta={theta!r}, nu={nu!r}, step exponent {theta - 1!r}")
    assert theta == 1 / 3
    assert nu == -1 / 3
    assert step_exp_ok


def test_criterion_09_run_is_deterministic(record_criterion, tmp_path):
    cfg = ROOT / "configs" / "quadratic.json"
    for out in ("a", "b"):
        res = subprocess.run([sys.executable, "-m", "qclab", "run", "--config", str(cfg),
                              "--out", str(tmp_path / out)], capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
    names = sorted(p.name for p in (tmp_path / "a").glob("trace_seed*.csv"))
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
            for n in names]
    ok = bool(names) and all(same)
    record_criterion(9, ok, f"{sum(same)}/{len(names)} trace files byte-identical")
    assert ok


def test_criterion_10_verify_all(record_criterion, tmp_path):
    start = time.perf_counter()
    res = subprocess.run([sys.executable, "-m", "qclab", "verify", "all",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    elapsed = time.perf_counter() - start
    ok = res.returncode == 0 and elapsed < 900
    record_criterion(10, ok, f"exit {res.returncode} in {elapsed:.1f}s (limit 900s); "
                             f"{res.stdout.strip().splitlines()[-1] if res.stdout else ''}")
    assert res.returncode == 0, res.stdout[-2000:] + res.stderr[-2000:]
    assert elapsed < 900
    assert (tmp_path / "verify_all.json").exists()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
