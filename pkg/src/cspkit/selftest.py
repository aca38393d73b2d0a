"""Structural self checks.

Each check verifies an identity the refinement machinery must satisfy by
construction: inverse pairs, nilpotent update generators, the basis
transformation law, the block recursions of the one-step scheme, and the
order relations of the invariance expansion. They run on the builtin
benchmark systems in a few seconds and are wired to the command line as the
selftest subcommand.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .csp import (
    BlockBasis,
    CspChain,
    embed_lower,
    embed_upper,
    initial_basis,
    lambda_assemble,
    lie_bracket_check,
    update_matrices,
)
from .fastslow import (
    invariance_residual,
    linear_system,
    mmh_system,
    series_eval,
    stacked_field,
)
from .numerics import FdConfig, directional_derivative_fd, fit_order, jacobian_fd

__all__ = ["CheckResult", "SelftestReport", "run_selftest"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return (f"[{status}] {self.name}: {self.value:.3e} "
                f"against {self.tolerance:.1e}{extra}")


@dataclass(frozen=True)
class SelftestReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = [c.line() for c in self.checks]
        n_bad = sum(not c.passed for c in self.checks)
        out.append(f"{len(self.checks) - n_bad}/{len(self.checks)} checks passed")
        return out


def _leq(name, value, tol, detail="") -> CheckResult:
    return CheckResult(name=name, passed=bool(value <= tol), value=float(value),
                       tolerance=float(tol), detail=detail)


def _band(name, value, lo, hi, detail="") -> CheckResult:
    # encode a two-sided band as distance from the band against zero half width
    ok = lo <= value <= hi
    return CheckResult(name=name, passed=bool(ok), value=float(value),
                       tolerance=float(hi),
                       detail=detail or f"expected within [{lo:g}, {hi:g}]")


def _dot_along_flow(sys, fn, y, z, eps, fd):
    """Directional derivative of a matrix-valued state function along the
    stacked field."""
    f = stacked_field(sys, y, z, eps)
    x = np.concatenate([y, z])
    shape = np.asarray(fn(y, z, eps)).shape
    flat = directional_derivative_fd(
        lambda xx: np.asarray(fn(xx[:sys.m], xx[sys.m:], eps)).ravel(), x, f,
        fd)
    return flat.reshape(shape)


def run_selftest(seed: int = 0) -> SelftestReport:
    rng = np.random.default_rng(seed)
    fd = FdConfig()
    sys = mmh_system()
    checks: list[CheckResult] = []

    # --- inverse pair of the constructed initial basis, random blocks
    m, n = 2, 3
    a12 = np.eye(m) + 0.3 * rng.standard_normal((m, m))
    a21 = np.eye(n) + 0.3 * rng.standard_normal((n, n))
    a22 = 0.5 * rng.standard_normal((n, m))
    basis0 = initial_basis(m, n, a12=a12, a21=a21, a22=a22)
    prod = basis0.b_fn(None, None, 0.0) @ basis0.a_fn(None, None, 0.0)
    checks.append(_leq("inverse_pair_constant",
                       np.max(np.abs(prod - np.eye(m + n))), 1e-9))

    # --- update generators are nilpotent, exactly
    uh = embed_upper(rng.standard_normal((n, m)), m, n)
    lh = embed_lower(rng.standard_normal((m, n)), m, n)
    nil = max(np.max(np.abs(uh @ uh)), np.max(np.abs(lh @ lh)))
    checks.append(_leq("nilpotent_corners", nil, 0.0,
                       detail="exact zero required"))

    # --- chains on the kinetics benchmark
    chain_one = CspChain(sys, "one-step", q_max=2)
    chain_full = CspChain(sys, "full", q_max=2)
    y = np.array([1.0])
    eps = 1e-2
    z_off = np.array([0.4])

    # accumulated projector form against the product of updates
    basis2 = chain_one.basis(2)
    p_hat = embed_upper(basis2.u_sum_fn(y, z_off, eps), sys.m, sys.n)
    a0 = initial_basis(sys.m, sys.n).a_fn(None, None, 0.0)
    d1 = np.max(np.abs(basis2.a_fn(y, z_off, eps) - a0 @ (np.eye(2) - p_hat)))
    d2 = np.max(np.abs(basis2.b_fn(y, z_off, eps) - (np.eye(2) + p_hat) @ a0))
    checks.append(_leq("projector_sum_matches_product", max(d1, d2), 1e-10))

    # --- bracket consistency of the operator assembly
    checks.append(_leq("lie_bracket_constant",
                       lie_bracket_check(sys, initial_basis(1, 1),
                                         [1.0], [0.4], eps), 1e-9))

    lin = linear_system()

    def lin_a(yy, zz, ee):
        return np.array([[1.0 + 0.2 * yy[0], 0.1 * zz[0]],
                         [0.0, 1.0]]) @ np.array([[0.0, 1.0], [1.0, 0.0]])

    lin_basis = BlockBasis(m=1, n=1, level=1, scheme="one-step", a_fn=lin_a,
                           b_fn=lambda yy, zz, ee: np.linalg.inv(lin_a(yy, zz, ee)))
    checks.append(_leq("lie_bracket_linear",
                       lie_bracket_check(lin, lin_basis, [0.8], [0.2], 0.05),
                       1e-8))

    z_on = chain_one.psi(0, y, eps)
    checks.append(_leq("lie_bracket_refined",
                       lie_bracket_check(sys, chain_one.basis(1),
                                         [1.0], z_on, eps), 1e-6))

    # --- transport pair identity: d(BA)/dt = 0
    basis1 = chain_one.basis(1)
    a_val = basis1.a_fn(y, z_off, eps)
    b_val = basis1.b_fn(y, z_off, eps)
    a_dot = basis1.a_dot_fn(y, z_off, eps)
    b_dot = basis1.b_dot_fn(y, z_off, eps)
    pair1 = np.max(np.abs(b_dot @ a_val + b_val @ a_dot))
    a_dot2 = _dot_along_flow(sys, basis2.a_fn, y, z_off, eps, fd)
    b_dot2 = _dot_along_flow(sys, basis2.b_fn, y, z_off, eps, fd)
    pair2 = np.max(np.abs(b_dot2 @ basis2.a_fn(y, z_off, eps)
                          + basis2.b_fn(y, z_off, eps) @ a_dot2))
    checks.append(_leq("transport_pair_identity", max(pair1, pair2), 1e-6))

    # --- transformation law of the assembled operator under a change of
    # basis A -> AC: new = C^-1 old C - C^-1 dC/dt
    base = initial_basis(1, 1)
    lam0 = lambda_assemble(sys, base, y, z_off, eps).matrix

    def transformed(c_fn):
        a_fn = lambda yy, zz, ee: base.a_fn(yy, zz, ee) @ c_fn(yy, zz, ee)
        b_fn = lambda yy, zz, ee: (np.linalg.inv(c_fn(yy, zz, ee))
                                   @ base.b_fn(yy, zz, ee))
        nb = BlockBasis(m=1, n=1, level=1, scheme="one-step",
                        a_fn=a_fn, b_fn=b_fn)
        return lambda_assemble(sys, nb, y, z_off, eps).matrix

    c_const = np.array([[1.0, 0.3], [-0.2, 1.0]])
    got = transformed(lambda yy, zz, ee: c_const)
    want = np.linalg.solve(c_const, lam0 @ c_const)
    checks.append(_leq("similarity_transform_constant",
                       np.max(np.abs(got - want)), 1e-6))

    def c_state(yy, zz, ee):
        return np.array([[1.0 + 0.1 * yy[0], 0.2 * zz[0]],
                         [0.05 * yy[0], 1.0 - 0.1 * zz[0]]])

    got_s = transformed(c_state)
    c_val = c_state(y, z_off, eps)
    c_dot = _dot_along_flow(sys, c_state, y, z_off, eps, fd)
    want_s = np.linalg.solve(c_val, lam0 @ c_val - c_dot)
    checks.append(_leq("similarity_transform_state",
                       np.max(np.abs(got_s - want_s)), 1e-5))

    # --- block recursions of the one-step update at level 1 -> 2
    lam1 = lambda_assemble(sys, basis1, y, z_off, eps)
    u1, _ = update_matrices(lam1)

    def u_of_state(yy, zz, ee):
        lb = lambda_assemble(sys, chain_one.basis(1), yy, zz, ee)
        return update_matrices(lb)[0]

    u1_dot = _dot_along_flow(sys, u_of_state, y, z_off, eps, fd)
    lam2 = lambda_assemble(sys, chain_one.basis(2), y, z_off, eps)
    rec_ff = lam1.ff + u1 @ lam1.sf
    rec_fs = u1 @ lam1.ss - u1 @ lam1.sf @ u1 + u1_dot
    rec_sf = lam1.sf
    rec_ss = lam1.ss - lam1.sf @ u1
    rec = np.block([[rec_ff, rec_fs], [rec_sf, rec_ss]])
    checks.append(_leq("block_recursion_one_step",
                       np.max(np.abs(lam2.matrix - rec)), 1e-6))

    # --- invariance residual of series truncations decays at order q+1
    coeffs = sys.manifold_coeffs(y)
    eps_grid = np.array([1e-2, 10.0 ** -2.5, 1e-3, 10.0 ** -3.5])
    for q in (0, 1, 2):
        res = [invariance_residual(
            sys, lambda yy: series_eval(sys.manifold_coeffs(yy), e, order=q),
            y, e) for e in eps_grid]
        fit = fit_order(eps_grid, np.array(res))
        checks.append(_band(f"invariance_series_order_q{q}", fit.slope,
                            q + 1 - 0.35, q + 1 + 0.35))

    # --- drift along the refined manifold matches the reduced slow flow
    def psi1(yy, ee):
        return chain_one.psi(1, yy, ee)

    def drift_gap(e):
        z1 = psi1(y, e)
        dpsi = jacobian_fd(lambda yy: psi1(yy, e), y, fd)
        lhs = dpsi @ (e * sys.g1(y, z1, e))
        z0 = np.atleast_1d(sys.manifold_h0(y))
        dh0 = jacobian_fd(lambda yy: np.atleast_1d(sys.manifold_h0(yy)), y, fd)
        rhs = e * (dh0 @ sys.g1(y, z0, 0.0))
        return float(np.max(np.abs(lhs - rhs)))

    gaps = np.array([drift_gap(e) for e in eps_grid])
    fit = fit_order(eps_grid, gaps)
    checks.append(CheckResult(
        name="reduced_flow_drift_order", passed=bool(fit.slope >= 1.7),
        value=float(fit.slope), tolerance=1.7,
        detail="slope must be at least the tolerance"))

    # --- the two refinement schemes agree on the manifold they define
    diff = abs(chain_full.psi(1, y, eps)[0] - chain_one.psi(1, y, eps)[0])
    checks.append(_leq("refined_manifold_agreement", diff, 1e-10))

    # --- refined bases remain inverse pairs
    worst = 0.0
    for chain in (chain_one, chain_full):
        b2 = chain.basis(2)
        prod = b2.b_fn(y, z_off, eps) @ b2.a_fn(y, z_off, eps)
        worst = max(worst, float(np.max(np.abs(prod - np.eye(2)))))
    checks.append(_leq("inverse_pair_refined", worst, 1e-6))

    return SelftestReport(checks=checks)
