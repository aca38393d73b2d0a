import numpy as np
import pytest
from numpy.testing import assert_allclose

from cspkit.numerics import (
    EPS,
    ConfigError,
    ConvergenceError,
    DomainError,
    FdConfig,
    InsufficientDataError,
    NewtonConfig,
    SingularMatrixError,
    directional_derivative_fd,
    eps_derivative,
    fit_order,
    jacobian_fd,
    newton_solve,
    series_coefficient,
    solve_checked,
)


def _f(x):
    return np.array([np.sin(x[0]) * x[1], x[0] ** 2 + np.exp(x[1])])


def _jf(x):
    return np.array([
        [np.cos(x[0]) * x[1], np.sin(x[0])],
        [2.0 * x[0], np.exp(x[1])],
    ])


class TestJacobianFd:
    def test_matches_analytic(self):
        x = np.array([0.7, -1.3])
        assert_allclose(jacobian_fd(_f, x), _jf(x), atol=1e-10)

    def test_richardson_beats_plain_central(self):
        x = np.array([0.7, -1.3])
        plain = jacobian_fd(_f, x, FdConfig(richardson=False))
        rich = jacobian_fd(_f, x, FdConfig(richardson=True))
        err_plain = np.max(np.abs(plain - _jf(x)))
        err_rich = np.max(np.abs(rich - _jf(x)))
        assert err_rich < err_plain
        assert err_rich < 1e-10

    def test_scalar_function_promoted(self):
        jac = jacobian_fd(lambda x: x[0] ** 3, np.array([2.0]))
        assert jac.shape == (1, 1)
        assert_allclose(jac[0, 0], 12.0, atol=1e-8)

    def test_non_finite_raises(self):
        def partial_domain(x):
            return np.array([float("nan") if x[0] < 0.0 else x[0]])

        with pytest.raises(DomainError):
            jacobian_fd(partial_domain, np.array([0.0]))


class TestDirectionalDerivative:
    def test_matches_jacobian_product(self):
        x = np.array([0.4, 0.9])
        v = np.array([1.5, -0.25])
        assert_allclose(directional_derivative_fd(_f, x, v), _jf(x) @ v, atol=1e-9)

    def test_zero_direction_gives_zeros(self):
        out = directional_derivative_fd(_f, np.array([0.4, 0.9]), np.zeros(2))
        assert_allclose(out, np.zeros(2))


class TestEpsDerivative:
    def test_first_derivative(self):
        d = eps_derivative(lambda e: 1.0 / (1.0 + e), order=1)
        assert_allclose(d, -1.0, atol=1e-9)

    def test_second_derivative(self):
        d = eps_derivative(lambda e: 1.0 / (1.0 + e), order=2)
        assert_allclose(d, 2.0, atol=1e-6)

    def test_vector_valued(self):
        d = eps_derivative(lambda e: np.array([e * 3.0, e * e]), order=1)
        assert_allclose(d, [3.0, 0.0], atol=1e-9)

    def test_bad_order(self):
        with pytest.raises(ConfigError):
            eps_derivative(lambda e: e, order=3)


class TestNewton:
    def test_scalar_root(self):
        res = newton_solve(lambda x: x ** 2 - 2.0, np.array([1.0]))
        assert_allclose(res.x[0], np.sqrt(2.0), rtol=1e-12)
        assert res.residual <= 1e-12
        assert res.iterations <= 8

    def test_vector_root_with_analytic_jacobian(self):
        def fun(x):
            return np.array([x[0] ** 2 + x[1] - 2.0, x[0] - x[1] ** 3])

        def jac(x):
            return np.array([[2.0 * x[0], 1.0], [1.0, -3.0 * x[1] ** 2]])

        res = newton_solve(fun, np.array([1.5, 0.5]), jac=jac)
        assert_allclose(fun(res.x), np.zeros(2), atol=1e-11)

    def test_singular_jacobian_raises(self):
        with pytest.raises(SingularMatrixError):
            newton_solve(lambda x: np.array([x[0] ** 3 + 1.0]), np.array([1.0]),
                         jac=lambda x: np.array([[0.0]]))

    def test_budget_exhausted_carries_best_iterate(self):
        # x^3 - 2x + 2 from 0 is the classic Newton two-cycle; two damped
        # iterations cannot reach the root near -1.77
        cfg = NewtonConfig(max_iterations=2, residual_tol=1e-15)
        with pytest.raises(ConvergenceError) as excinfo:
            newton_solve(lambda x: np.array([x[0] ** 3 - 2.0 * x[0] + 2.0]),
                         np.array([0.0]), config=cfg)
        err = excinfo.value
        assert err.best_x is not None
        assert err.best_residual is not None and np.isfinite(err.best_residual)

    def test_damping_handles_overshoot(self):
        # full Newton steps on atan from x0=2 diverge; halving must rescue it
        res = newton_solve(lambda x: np.array([np.arctan(x[0])]), np.array([2.0]))
        assert_allclose(res.x[0], 0.0, atol=1e-10)


class TestSolveChecked:
    def test_solves(self):
        a = np.array([[2.0, 0.0], [0.0, 4.0]])
        assert_allclose(solve_checked(a, np.array([2.0, 8.0])), [1.0, 2.0])

    def test_singular_raises(self):
        with pytest.raises(SingularMatrixError):
            solve_checked(np.zeros((2, 2)), np.ones(2))


class TestFitOrder:
    def test_exact_power_law(self):
        eps = np.array([1e-2, 1e-3, 1e-4])
        fit = fit_order(eps, 3.0 * eps ** 2)
        assert_allclose(fit.slope, 2.0, atol=1e-9)
        assert fit.n_excluded == 0

    def test_roundoff_floor_exclusion(self):
        eps = [1e-1, 1e-2, 1e-3, 1e-4]
        errs = [1e-3, 1e-6, 1e-15, 1e-16]  # last two below 100*EPS
        fit = fit_order(eps, errs)
        assert fit.n_excluded == 2
        assert len(fit.eps_used) == 2

    def test_too_few_samples(self):
        with pytest.raises(InsufficientDataError):
            fit_order([1e-2, 1e-3], [1e-4, 1e-6])

    def test_all_below_floor(self):
        with pytest.raises(InsufficientDataError):
            fit_order([1e-2, 1e-3, 1e-4], [1e-16, 1e-16, 1e-17])


class TestSeriesCoefficient:
    def test_linear_coefficient(self):
        c1 = series_coefficient(lambda e: np.exp(2.0 * e), order=1)
        assert_allclose(c1, 2.0, rtol=1e-9)

    def test_quadratic_coefficient(self):
        c2 = series_coefficient(lambda e: np.exp(2.0 * e), order=2)
        assert_allclose(c2, 2.0, rtol=1e-6)

    def test_rational_function(self):
        # f = 1/(3 + e): c2 = 1/27
        c2 = series_coefficient(lambda e: 1.0 / (3.0 + e), order=2)
        assert_allclose(c2, 1.0 / 27.0, rtol=1e-6)
