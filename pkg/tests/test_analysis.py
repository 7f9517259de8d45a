import math

import numpy as np
import pytest

from qclab.analysis import (
    BoundInputs,
    dp_qc_sgd_bound,
    dp_qc_sgd_constant_bound,
    expected_update_two_point,
    fixed_clipping_bound,
    fixed_point_two_point,
    mean_stderr,
    one_step_descent_check,
    one_step_descent_exact_two_point,
    qc_sgd_bound,
    qc_sgd_constant_bound,
    stationarity_measure,
    unit_clip_fixed_point,
)
from qclab.core import rng_stream
from qclab.optimizer import RunTrace
from qclab.problems import QuadraticProblem, TwoPointExample

TP = TwoPointExample(2.0, 0.75)


def inputs(**kw):
    base = dict(F0=1.0, L=1.0, sigma_q=1.0, q=2.0, p=0.9, beta=0.2, c=0.2, T=100)
    return BoundInputs(**(base | kw))


def test_constant_bound_terms():
    terms = qc_sgd_constant_bound(inputs(), 0.1)
    assert terms == pytest.approx((0.2, 2.0, 0.5, 2.7), rel=1e-12)


def test_general_bound_collapses_to_constant_form():
    assert qc_sgd_bound(inputs(), np.full(100, 0.1)) == pytest.approx(2.7, rel=1e-12)


def test_noiseless_bounds():
    g = np.linspace(0.1, 0.01, 50)
    assert qc_sgd_bound(inputs(sigma_q=0.0), g) == pytest.approx(2.0 / g.sum())
    assert dp_qc_sgd_bound(inputs(sigma_q=0.0, sigma_dp=0.3, B=4), g) == pytest.approx(
        1.0 / g.sum())


def test_time_varying_h():
    g = np.array([0.1, 0.05])
    h = np.array([0.5, 0.25])
    inp = inputs(p=0.5, beta=0.1, c=0.1, sigma_q=2.0, F0=3.0)
    expected = (2 * 3.0 + 4.0 * np.sum(g / h * (2 * g + h * h / 0.1))) / g.sum()
    assert qc_sgd_bound(inp, g, hs=h) == pytest.approx(expected, rel=1e-12)


def test_step_condition_enforced():
    with pytest.raises(ValueError):
        qc_sgd_constant_bound(inputs(), 0.71)
    qc_sgd_constant_bound(inputs(), 0.7)
    with pytest.raises(ValueError):
        qc_sgd_bound(inputs(), [0.1, 0.8])
    # p close to 0 makes the admissible step negative
    with pytest.raises(ValueError):
        qc_sgd_constant_bound(inputs(p=0.05), 1e-6)


def test_small_step_limit_leaves_bias_term():
    inp = inputs(T=10**12)
    terms = qc_sgd_constant_bound(inp, 1e-6)
    assert terms.total == pytest.approx(terms.term3, rel=1e-4)
    assert terms.term3 == pytest.approx(0.1 / 0.2)


def test_dp_bound_large_noise():
    s = 33.93
    inp = inputs(B=100, sigma_dp=s, T=10)
    S = 0.01 + s * s
    assert inp.big_s == pytest.approx(1151.2549, rel=1e-9)
    gamma = (0.9 - 0.1 - 0.2) / (2 * S)
    h = 0.1
    expected = 1.0 / (10 * gamma) + (1 / h) * (2 * gamma * S + h * h / 0.4)
    assert dp_qc_sgd_bound(inp, np.full(10, gamma)) == pytest.approx(expected, rel=1e-12)
    # the step-size term is the dominant part of the noise contribution
    assert 2 * gamma * S / h > h / 0.4


def test_dp_constant_terms_sum():
    terms = dp_qc_sgd_constant_bound(inputs(B=16, sigma_dp=0.5), 0.05)
    assert terms.term1 + terms.term2 + terms.term3 == pytest.approx(terms.total, rel=1e-12)


def test_dp_step_condition():
    with pytest.raises(ValueError):
        dp_qc_sgd_bound(inputs(sigma_dp=2.0), [0.1])
    with pytest.raises(ValueError):
        dp_qc_sgd_bound(inputs(p=0.3, beta=0.5, c=0.2), [0.01])


def test_fixed_clipping_bound():
    assert fixed_clipping_bound(1.0, 0.01, 10**4, 1.0, 1.0, 1.0) == pytest.approx(1.0201)
    assert fixed_clipping_bound(1.0, 0.01, 100, 2.0, 1.0, 0.0) == pytest.approx(0.25 + 1.0)
    assert fixed_clipping_bound(1.0, 0.01, 100, math.inf, 1.0, 1.0) == pytest.approx(1.01)


def test_stationarity_measure():
    assert stationarity_measure(RunTrace.from_rows([1, 1], [4, 2]), 0.5) == 1.5
    assert stationarity_measure(RunTrace.from_rows([0.3, 0.2], [0, 0]), 0.5) == 0.0
    tr = RunTrace.from_rows(np.full(4, 0.1), [1.0, 2.0, 3.0, 6.0])
    assert stationarity_measure(tr, 0.2) == pytest.approx(0.2 * 3.0)


def test_mean_stderr():
    m, se = mean_stderr([1.0, 2.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1 / math.sqrt(3))


def test_descent_check_noiseless():
    prob = QuadraticProblem.isotropic(2, sigma=0.0)
    x = np.array([1.0, -0.5])
    res = one_step_descent_check(prob, x, 0.1, 0.5, 0.5, 100_000, rng_stream(0, "data_sampling"))
    assert res.lhs == pytest.approx(prob.f(x - 0.1 * prob.grad(x)), rel=1e-14)
    assert res.margin >= 0 and res.stderr == 0.0


def test_descent_check_gaussian_repeated():
    prob = QuadraticProblem.isotropic(1)
    rng = rng_stream(1, "data_sampling")
    for _ in range(5):
        res = one_step_descent_check(prob, np.ones(1), 0.05, 0.75, 0.5, 100_000, rng)
        assert res.passed(4.0)


def test_descent_exact_two_point():
    lhs, rhs = one_step_descent_exact_two_point(TP, -1.0, 0.1, 0.5, 0.5)
    # both atoms have norm 1, so tau = 1 and nothing is clipped
    f = lambda v: 0.75 * 0.5 * (v + 2) ** 2 + 0.25 * 0.5 * v ** 2  # noqa: E731
    assert lhs == pytest.approx(0.75 * f(-1.1) + 0.25 * f(-0.9), rel=1e-14)
    assert lhs == pytest.approx(0.48, rel=1e-12)
    assert rhs == pytest.approx(0.5 - 0.1 * 0.65 * 0.25 + 0.0375 + 0.015, rel=1e-12)
    assert lhs <= rhs


def test_descent_check_two_point_matches_enumeration():
    rng = rng_stream(2, "data_sampling")
    res = one_step_descent_check(TP, np.array([-2.5]), 0.1, 0.5, 0.5, 200_000, rng, exact=True)
    lhs, rhs = one_step_descent_exact_two_point(TP, -2.5, 0.1, 0.5, 0.5)
    assert abs(res.lhs - lhs) < 5 * res.stderr + 1e-3
    assert lhs <= rhs


def test_descent_check_needs_samples():
    with pytest.raises(ValueError):
        one_step_descent_check(TP, [0.0], 0.1, 0.5, 0.5, 1000, rng_stream(0, "dp_noise"))


@pytest.mark.parametrize("x,p,expected", [(-0.5, 0.5, 1.0), (-1.6, 0.5, 0.2),
                                          (-1.5, 0.99, 0.0)])
def test_expected_update(x, p, expected):
    assert expected_update_two_point(x, TP, p) == pytest.approx(expected, abs=1e-15)


def test_expected_update_brute_force():
    rng = np.random.default_rng(0)
    for x in rng.uniform(-6, 3, 50):
        for p in (0.3, 0.5, 0.8):
            a1, a2 = abs(x + 2), abs(x)
            atoms = sorted([(a1, 0.75), (a2, 0.25)])
            cum, tau = 0.0, None
            for v, w in atoms:
                cum += w
                if cum >= p:
                    tau = v
                    break
            alpha = lambda n: 1.0 if n <= tau else tau / n  # noqa: E731
            brute = 0.75 * alpha(a1) * (x + 2) + 0.25 * alpha(a2) * x
            assert expected_update_two_point(x, TP, p) == pytest.approx(brute, abs=1e-14)


def test_fixed_point_oracle():
    root = fixed_point_two_point(TP, 0.5)
    assert abs(expected_update_two_point(root, TP, 0.5)) <= 1e-9
    assert root != pytest.approx(-1.5, abs=1e-3)
    assert abs(TP.grad([root])[0]) > 0.1


def test_fixed_point_without_clipping_is_minimiser():
    assert fixed_point_two_point(TP, 0.99) == pytest.approx(-1.5, abs=1e-9)


def test_fixed_point_no_sign_change():
    with pytest.raises(ValueError, match="no sign change"):
        fixed_point_two_point(TP, 0.5, search_interval=(-1.0, 3.0))


def test_unit_clip_fixed_point():
    assert unit_clip_fixed_point(0.75) == -3.0
    assert unit_clip_fixed_point(2 / 3) == pytest.approx(-2.0)
    assert unit_clip_fixed_point(0.5 + 1e-9) == pytest.approx(-1.0, rel=1e-7)
    with pytest.raises(ValueError):
        unit_clip_fixed_point(0.5)


def test_bound_inputs_for_problem():
    prob = QuadraticProblem.isotropic(2, sigma=1.0)
    inp = BoundInputs.for_problem(prob, [3.0, 3.0], 0.9, 0.2, 0.2, T=10)
    assert inp.F0 == 9.0 and inp.sigma_q == pytest.approx(math.sqrt(2)) and inp.L == 1.0
    with pytest.raises(ValueError):
        BoundInputs.for_problem(prob, [0.0, 0.0], 0.9, 1.2, 0.2)
