import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cspkit.fastslow import (
    builtin_system,
    expansion_coeffs,
    expansion_h1,
    expansion_h2,
    hyperbolicity_margin,
    integrate,
    invariance_residual,
    linear_system,
    mmh_system,
    quad_system,
    series_eval,
    stacked_field,
    stacked_jacobian,
    stacked_jacobian_dot,
)
from cspkit.fastslow import FastSlowSystem
from cspkit.numerics import (
    ConfigError,
    DomainError,
    SpectralGapError,
    StiffnessError,
    fit_order,
)

EPS_GRID = [1e-2, 10 ** -2.5, 1e-3, 10 ** -3.5]


class TestSystemBasics:
    def test_mmh_parameter_validation(self):
        with pytest.raises(ConfigError):
            mmh_system(kappa=1.0, lam=1.0)
        with pytest.raises(ConfigError):
            mmh_system(kappa=1.0, lam=2.0)
        with pytest.raises(ConfigError):
            mmh_system(kappa=2.0, lam=-1.0)

    def test_stacked_field_closed_form(self):
        sys = mmh_system()
        f = stacked_field(sys, [1.0], [0.4], 0.01)
        # s' = eps(-s + (s+1)c), c' = s - (s+2)c at kappa=2, lam=1
        assert_allclose(f, [0.01 * (-1.0 + 2.0 * 0.4), 1.0 - 3.0 * 0.4], rtol=1e-15)

    def test_shape_validation(self):
        sys = mmh_system()
        with pytest.raises(ConfigError):
            stacked_field(sys, [1.0, 2.0], [0.4], 0.01)
        with pytest.raises(DomainError):
            stacked_field(sys, [1.0], [0.4], -0.01)

    def test_stacked_jacobian_closed_form(self):
        sys = mmh_system()
        j = stacked_jacobian(sys, [1.0], [0.4], 0.01)
        expected = np.array([[0.01 * (0.4 - 1.0), 0.01 * 2.0],
                             [1.0 - 0.4, -3.0]])
        assert_allclose(j, expected, rtol=1e-15)

    def test_fd_jacobian_fallback_agrees(self):
        sys = mmh_system()
        bare = dataclasses.replace(sys, d_y_g1=None, d_z_g1=None,
                                   d_y_g2=None, d_z_g2=None)
        pt = ([1.3], [0.35], 0.02)
        assert_allclose(stacked_jacobian(bare, *pt), stacked_jacobian(sys, *pt),
                        atol=1e-9)

    def test_jac_dot_fd_fallback_agrees(self):
        sys = mmh_system()
        bare = dataclasses.replace(sys, jac_dot=None)
        args = ([1.1], [0.3], 0.05, [0.7], [-0.2])
        assert_allclose(stacked_jacobian_dot(bare, *args),
                        stacked_jacobian_dot(sys, *args), atol=1e-7)

    def test_builtin_dispatch(self):
        assert builtin_system("mmh", kappa=3.0, lam=1.0).m == 1
        assert builtin_system("linear").name == "linear"
        assert builtin_system("quad").name == "quad"
        with pytest.raises(ConfigError):
            builtin_system("nope")
        with pytest.raises(ConfigError):
            builtin_system("linear", kappa=2.0)


class TestManifoldCoefficients:
    def test_mmh_closed_coefficients(self):
        sys = mmh_system()
        h0, h1, h2 = sys.manifold_coeffs(np.array([1.0]))
        assert_allclose(h0[0], 1.0 / 3.0, rtol=1e-15)
        assert_allclose(h1[0], 2.0 / 81.0, rtol=1e-15)
        assert_allclose(h2[0], -10.0 / 2187.0, rtol=1e-15)
        # frozen from the sympy invariance-series oracle
        # (tests/oracles/mmh_series_oracle.py)
        _, _, h2_half = sys.manifold_coeffs(np.array([0.5]))
        assert_allclose(h2_half[0], -0.004096, rtol=1e-12)
        _, _, h2_two = sys.manifold_coeffs(np.array([2.0]))
        assert_allclose(h2_two[0], -40.0 / 16384.0, rtol=1e-15)

    @pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
    def test_generic_expansion_matches_mmh_closed_forms(self, s):
        sys = mmh_system()
        y = np.array([s])
        _, h1_ref, h2_ref = sys.manifold_coeffs(y)
        assert_allclose(expansion_h1(sys, y), h1_ref, rtol=1e-6)
        assert_allclose(expansion_h2(sys, y), h2_ref, rtol=1e-4)

    def test_generic_expansion_nondefault_parameters(self):
        sys = mmh_system(kappa=3.0, lam=0.5)
        y = np.array([0.8])
        _, h1_ref, h2_ref = sys.manifold_coeffs(y)
        assert_allclose(expansion_h1(sys, y), h1_ref, rtol=1e-6)
        assert_allclose(expansion_h2(sys, y), h2_ref, rtol=1e-4)

    def test_linear_expansion_exact(self):
        sys = linear_system()
        y = np.array([1.7])
        assert_allclose(expansion_h1(sys, y), [1.7], atol=1e-9)
        assert_allclose(expansion_h2(sys, y), [1.7], atol=1e-6)

    def test_quad_expansion_matches_hand_values(self):
        # hand expansion: h0 = y^2, h1 = y + 2y^2, h2 = y + 4y^2 - 2y^3.
        # The d_eps_g1 term is nonzero here, so this pins the sign convention
        # inside expansion_h2.
        sys = quad_system()
        y = np.array([0.7])
        assert_allclose(expansion_h1(sys, y), [0.7 + 2.0 * 0.49], rtol=1e-7)
        assert_allclose(expansion_h2(sys, y), [0.7 + 4.0 * 0.49 - 2.0 * 0.343],
                        rtol=1e-5)

    def test_series_eval_orders(self):
        sys = mmh_system()
        coeffs = expansion_coeffs(sys, np.array([1.0]))
        eps = 0.01
        assert_allclose(series_eval(coeffs, eps, order=0), coeffs.h0)
        assert_allclose(series_eval(coeffs, eps, order=2),
                        coeffs.h0 + eps * coeffs.h1 + eps ** 2 * coeffs.h2)
        with pytest.raises(ConfigError):
            series_eval(coeffs, eps, order=3)


class TestInvarianceResidual:
    @pytest.mark.parametrize("order,expected", [(0, 1.0), (1, 2.0), (2, 3.0)])
    def test_truncation_order_drives_residual_order(self, order, expected):
        sys = mmh_system()

        def make_h(eps):
            def h(yy):
                c = expansion_coeffs(sys, yy)
                return series_eval(c, eps, order=order)
            return h

        errs = [invariance_residual(sys, make_h(e), np.array([1.0]), e)
                for e in EPS_GRID]
        fit = fit_order(EPS_GRID, errs)
        assert abs(fit.slope - expected) < 0.3

    def test_wrong_sign_in_h2_degrades_to_second_order(self):
        # flipping the d_eps_g1 contribution on the quad system turns the
        # third-order residual into a second-order one
        sys = quad_system()
        y0 = 0.7

        def make_h(eps, flip):
            def h(yy):
                v = yy[0]
                h2 = v + 4.0 * v * v + (2.0 if flip else -2.0) * v ** 3
                return np.array([v * v + eps * (v + 2.0 * v * v) + eps * eps * h2])
            return h

        good = [invariance_residual(sys, make_h(e, False), np.array([y0]), e)
                for e in EPS_GRID]
        bad = [invariance_residual(sys, make_h(e, True), np.array([y0]), e)
               for e in EPS_GRID]
        assert fit_order(EPS_GRID, good).slope > 2.7
        assert fit_order(EPS_GRID, bad).slope < 2.5


class TestHyperbolicity:
    def test_mmh_margin(self):
        sys = mmh_system()
        assert_allclose(hyperbolicity_margin(sys, [1.0]), 3.0, rtol=1e-12)

    def test_repelling_fast_block_raises(self):
        sys = FastSlowSystem(
            name="repeller", m=1, n=1,
            g1=lambda y, z, eps: np.array([-y[0]]),
            g2=lambda y, z, eps: np.array([z[0]]),
            manifold_h0=lambda y: np.zeros(1),
        )
        with pytest.raises(SpectralGapError):
            hyperbolicity_margin(sys, [1.0])


class TestIntegrate:
    def test_linear_system_closed_form(self):
        sys = linear_system()
        eps = 0.1
        y0, z0 = 2.0, 1.0
        traj = integrate(sys, [y0], [z0], eps, 5.0, num_points=11)
        t = traj.t
        y_exact = y0 * np.exp(-eps * t)
        # z' = -z + eps y: particular eps*y/(1 - eps), homogeneous e^-t
        part = eps * y_exact / (1.0 - eps)
        z_exact = (z0 - eps * y0 / (1.0 - eps)) * np.exp(-t) + part
        assert_allclose(traj.y[:, 0], y_exact, atol=1e-7)
        assert_allclose(traj.z[:, 0], z_exact, atol=1e-7)

    def test_zero_t_end_single_sample(self):
        traj = integrate(mmh_system(), [1.0], [0.4], 0.01, 0.0)
        assert traj.t.shape == (1,)
        assert_allclose(traj.y[0], [1.0])
        assert_allclose(traj.z[0], [0.4])

    def test_step_budget_translates_to_stiffness_error(self):
        with pytest.raises(StiffnessError):
            integrate(mmh_system(), [1.0], [0.4], 1e-4, 2000.0, max_steps=200)

    def test_negative_t_end_rejected(self):
        with pytest.raises(ConfigError):
            integrate(mmh_system(), [1.0], [0.4], 0.01, -1.0)
