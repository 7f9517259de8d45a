import math

import numpy as np
import pytest

from qclab.core import rng_stream
from qclab.problems import (
    CalibrationError,
    GaussianNoise,
    ParetoNoise,
    QuadraticProblem,
    StudentTNoise,
    TwoPointExample,
    calibrate_sigma_q,
    finite_diff_grad,
    grad_exact,
    grad_sample,
    make_noise,
)


@pytest.fixture
def rng():
    return rng_stream(123, "data_sampling")


def test_two_point_sample_takes_two_values(rng):
    prob = TwoPointExample(2.0, 0.75)
    draws = prob.grad_samples(np.array([-0.5]), rng, 40_000)[:, 0]
    assert set(np.unique(draws)) == {-0.5, 1.5}
    frac = np.mean(draws == 1.5)
    assert abs(frac - 0.75) < 4 * math.sqrt(0.75 * 0.25 / 40_000)


def test_noiseless_quadratic_sample_is_exact(rng):
    prob = QuadraticProblem.isotropic(3, sigma=0.0)
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(grad_sample(prob, x, rng), grad_exact(prob, x))


def test_gaussian_quadratic_sample_mean(rng):
    prob = QuadraticProblem.isotropic(2, sigma=1.0)
    n = 100_000
    mean = prob.grad_samples(np.array([1.0, 1.0]), rng, n).mean(axis=0)
    tol = 3 * (1.0 * math.sqrt(2)) / math.sqrt(n)
    assert np.all(np.abs(mean - 1.0) <= tol)


@pytest.mark.parametrize("x,expected", [(-1.5, 0.0), (-3.0, -1.5)])
def test_two_point_exact_gradient(x, expected):
    assert grad_exact(TwoPointExample(2.0, 0.75), [x])[0] == pytest.approx(expected, abs=1e-15)


def test_quadratic_exact_gradient():
    prob = QuadraticProblem(x_star=[1.0], curvature=[2.0])
    assert grad_exact(prob, [0.0])[0] == -2.0
    assert prob.L == 2.0 and prob.f_inf == 0.0


def test_sigma_q_constants():
    assert QuadraticProblem.isotropic(4, sigma=1.5).sigma_q == pytest.approx(3.0)
    assert QuadraticProblem.isotropic(4, sigma=0.0).sigma_q == 0.0
    tp = TwoPointExample(2.0, 0.75)
    # |noise| is 0.5 w.p. 0.75 and 1.5 w.p. 0.25
    assert tp.sigma_q == pytest.approx(math.sqrt(0.75 * 0.25 + 0.25 * 2.25))
    assert tp.f_inf == pytest.approx(0.375)
    assert tp.x_star[0] == -1.5


def test_two_point_f_inf_is_minimum():
    tp = TwoPointExample(2.0, 0.75)
    xs = np.linspace(-6, 4, 1001)[:, None]
    assert np.all(tp.f(xs) >= tp.f_inf - 1e-15)


def test_constructor_validation():
    with pytest.raises(ValueError):
        TwoPointExample(2.0, 0.4)
    with pytest.raises(ValueError):
        TwoPointExample(-1.0, 0.75)
    with pytest.raises(ValueError):
        QuadraticProblem(x_star=[0.0], curvature=[-1.0])
    with pytest.raises(ValueError):
        QuadraticProblem.isotropic(2, q=2.5)
    with pytest.raises(ValueError):
        make_noise({"kind": "cauchy"})


def test_make_noise():
    assert isinstance(make_noise({"kind": "gaussian", "sigma": 1.0}), GaussianNoise)
    assert isinstance(make_noise({"kind": "student_t", "dof": 3, "scale": 1.0}), StudentTNoise)
    assert isinstance(make_noise({"kind": "pareto_symmetric", "tail_index": 3.0}), ParetoNoise)
    assert make_noise(None) is None


@pytest.mark.parametrize("x,expected", [
    ([1.0, 0.0], [1.0, 0.0]),
])
def test_finite_diff_quadratic(x, expected):
    prob = QuadraticProblem.isotropic(2, sigma=0.0)
    np.testing.assert_allclose(finite_diff_grad(prob, x, 1e-5), expected, atol=1e-6)


def test_finite_diff_two_point_and_minimisers():
    tp = TwoPointExample(2.0, 0.75)
    assert finite_diff_grad(tp, [0.0])[0] == pytest.approx(1.5, abs=1e-6)
    assert abs(finite_diff_grad(tp, tp.x_star)[0]) <= 1e-6
    quad = QuadraticProblem(x_star=[0.3, -1.0], curvature=[1.0, 4.0])
    assert np.linalg.norm(finite_diff_grad(quad, quad.x_star)) <= 1e-6


def test_finite_diff_matches_exact_on_random_points(rng):
    problems = [TwoPointExample(2.0, 0.75),
                QuadraticProblem(x_star=[0.3, -1.0, 2.0], curvature=[1.0, 4.0, 0.5])]
    for prob in problems:
        for _ in range(100):
            x = rng.normal(0, 3, size=prob.dim)
            g = grad_exact(prob, x)
            err = np.linalg.norm(finite_diff_grad(prob, x) - g)
            assert err <= 1e-5 * (1 + np.linalg.norm(g))


@pytest.mark.parametrize("prob", [
    QuadraticProblem.isotropic(3, sigma=2.0),
    QuadraticProblem.isotropic(2, noise=StudentTNoise(4.0, 1.0), q=2.0, sigma_q=1.0),
    TwoPointExample(2.0, 0.75),
], ids=["gaussian", "student_t", "two_point"])
def test_unbiased_samples(prob, rng):
    n = 100_000
    for _ in range(10):
        x = rng.normal(0, 2, size=prob.dim)
        g = prob.grad_samples(x, rng, n)
        se = g.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(g.mean(axis=0) - prob.grad(x)) <= 4 * se + 1e-12)


def test_smoothness_inequality(rng):
    for prob in (TwoPointExample(2.0, 0.75),
                 QuadraticProblem(x_star=[1.0, 2.0], curvature=[0.5, 3.0])):
        for _ in range(1000):
            x = rng.normal(0, 3, size=prob.dim)
            u = rng.normal(0, 3, size=prob.dim)
            lhs = prob.f(x + u)
            rhs = prob.f(x) + prob.grad(x) @ u + 0.5 * prob.L * (u @ u)
            assert lhs <= rhs + 1e-9 * (1 + abs(rhs))


def test_calibrate_gaussian(rng):
    prob = QuadraticProblem.isotropic(1, sigma=1.0)
    est = calibrate_sigma_q(prob, [np.zeros(1), np.ones(1)], 2.0, 20_000, rng)
    assert est == pytest.approx(1.0, rel=0.05)


def test_calibrate_zero_noise(rng):
    prob = QuadraticProblem.isotropic(2, sigma=0.0)
    assert calibrate_sigma_q(prob, [np.zeros(2)], 1.5, 1000, rng) == 0.0


def test_calibrate_flags_missing_moment(rng):
    # Student-t with dof=2 has no finite second moment
    prob = QuadraticProblem.isotropic(1, noise=StudentTNoise(2.0, 1.0), q=2.0, sigma_q=1.0)
    with pytest.raises(CalibrationError):
        calibrate_sigma_q(prob, [np.zeros(1)], 2.0, 10_000, rng)


def test_student_t_moment_existence():
    noise = StudentTNoise(3.0, 1.0)
    assert noise.moment_exists(2.5)
    assert not noise.moment_exists(3.0)
    assert StudentTNoise(5.0, 1.0).sigma_q(2.0, 1) == pytest.approx(math.sqrt(5 / 3))


def test_calibrate_flags_drift(rng):
    class Drifting(QuadraticProblem):
        def grad_samples(self, x, rng, n):
            g = np.zeros((n, self.dim))
            g[-1] = 1e3  # a single huge late sample moves the running estimate
            return g + self.grad(x)

    prob = Drifting(x_star=[0.0], curvature=[1.0])
    with pytest.raises(CalibrationError) as info:
        calibrate_sigma_q(prob, [np.zeros(1)], 2.0, 1000, rng)
    assert len(info.value.estimates) == 2


def test_calibrate_requires_samples(rng):
    with pytest.raises(ValueError):
        calibrate_sigma_q(QuadraticProblem.isotropic(1), [np.zeros(1)], 2.0, 999, rng)


def test_require_sigma_q_for_heavy_tails():
    prob = QuadraticProblem.isotropic(1, noise=ParetoNoise(3.0, 1.0), q=1.5)
    with pytest.raises(ValueError):
        prob.require_sigma_q()
    assert prob.with_sigma_q(2.0).require_sigma_q() == 2.0
