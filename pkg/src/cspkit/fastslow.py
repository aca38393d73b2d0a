"""Two-timescale vector fields and their slow-manifold expansions.

A system here is

    y' = eps * g1(y, z, eps)        (m slow variables)
    z' = g2(y, z, eps)              (n fast variables)

in the fast time scale, together with a critical manifold z = h0(y) on which
g2(y, h0(y), 0) = 0. The slow invariant manifold admits an expansion
z = h0(y) + eps*h1(y) + eps^2*h2(y) + ..., whose coefficients are pinned by
the invariance equation

    g2(y, h(y, eps), eps) - eps * Dh(y, eps) g1(y, h(y, eps), eps) = 0.

This module evaluates the stacked field and Jacobian, computes h1 and h2 for
any system from that equation, and ships the benchmark systems used in the
experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .numerics import (
    ConfigError,
    DomainError,
    FdConfig,
    SpectralGapError,
    StiffnessError,
    eps_derivative,
    directional_derivative_fd,
    jacobian_fd,
    solve_checked,
)

__all__ = [
    "FastSlowSystem",
    "ExpansionCoeffs",
    "Trajectory",
    "stacked_field",
    "stacked_jacobian",
    "stacked_jacobian_dot",
    "fast_jacobian_z",
    "expansion_h1",
    "expansion_h2",
    "expansion_coeffs",
    "series_eval",
    "invariance_residual",
    "hyperbolicity_margin",
    "mmh_system",
    "linear_system",
    "quad_system",
    "builtin_system",
    "BUILTIN_SYSTEMS",
    "integrate",
]


@dataclass(frozen=True)
class FastSlowSystem:
    """A two-timescale system plus whatever analytic structure it can offer.

    g1 and g2 take (y, z, eps) with y of shape (m,), z of shape (n,) and
    return (m,) and (n,). The six partial-derivative fields are optional; when
    all state partials are present the stacked Jacobian is assembled
    analytically instead of by finite differences. jac_dot, if given, returns
    the directional derivative of the stacked Jacobian along a state
    direction (wy, wz); it is what makes transport terms of refined bases
    exact (see csp.lambda_assemble). manifold_h0 evaluates the critical
    manifold; manifold_coeffs, when known in closed form, returns the
    ExpansionCoeffs (h0(y), h1(y), h2(y)) used as experiment references.
    """

    name: str
    m: int
    n: int
    g1: Callable
    g2: Callable
    d_y_g1: Optional[Callable] = None
    d_z_g1: Optional[Callable] = None
    d_eps_g1: Optional[Callable] = None
    d_y_g2: Optional[Callable] = None
    d_z_g2: Optional[Callable] = None
    d_eps_g2: Optional[Callable] = None
    jac_dot: Optional[Callable] = None
    manifold_h0: Optional[Callable] = None
    manifold_coeffs: Optional[Callable] = None

    @property
    def size(self) -> int:
        return self.m + self.n

    def has_state_partials(self) -> bool:
        return all(p is not None for p in
                   (self.d_y_g1, self.d_z_g1, self.d_y_g2, self.d_z_g2))


@dataclass(frozen=True)
class ExpansionCoeffs:
    """Slow-manifold expansion coefficients at a fixed y.

    Iterable, so h0, h1, h2 = coeffs unpacks in order.
    """

    h0: np.ndarray
    h1: np.ndarray
    h2: np.ndarray

    def __iter__(self):
        return iter((self.h0, self.h1, self.h2))


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    y: np.ndarray  # shape (k, m)
    z: np.ndarray  # shape (k, n)


def _as_state(sys: FastSlowSystem, y, z, eps: float):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if y.shape != (sys.m,) or z.shape != (sys.n,):
        raise ConfigError(
            f"{sys.name}: expected shapes ({sys.m},) and ({sys.n},), "
            f"got {y.shape} and {z.shape}")
    eps = float(eps)
    if eps < 0.0 or not np.isfinite(eps):
        raise DomainError(f"{sys.name}: eps must be finite and >= 0, got {eps}")
    return y, z, eps


def stacked_field(sys: FastSlowSystem, y, z, eps: float) -> np.ndarray:
    """The fast-time field (eps*g1, g2) as one (m+n,) vector, slow rows first."""
    y, z, eps = _as_state(sys, y, z, eps)
    top = eps * np.atleast_1d(np.asarray(sys.g1(y, z, eps), dtype=float))
    bot = np.atleast_1d(np.asarray(sys.g2(y, z, eps), dtype=float))
    out = np.concatenate([top, bot])
    if not np.all(np.isfinite(out)):
        raise DomainError(f"{sys.name}: field evaluated to non-finite values")
    return out


def stacked_jacobian(sys: FastSlowSystem, y, z, eps: float,
                     fd: FdConfig | None = None) -> np.ndarray:
    """State Jacobian of the stacked field, analytic when partials exist."""
    y, z, eps = _as_state(sys, y, z, eps)
    if sys.has_state_partials():
        j = np.empty((sys.size, sys.size))
        j[:sys.m, :sys.m] = eps * np.atleast_2d(sys.d_y_g1(y, z, eps))
        j[:sys.m, sys.m:] = eps * np.atleast_2d(sys.d_z_g1(y, z, eps))
        j[sys.m:, :sys.m] = np.atleast_2d(sys.d_y_g2(y, z, eps))
        j[sys.m:, sys.m:] = np.atleast_2d(sys.d_z_g2(y, z, eps))
        if not np.all(np.isfinite(j)):
            raise DomainError(f"{sys.name}: Jacobian evaluated to non-finite values")
        return j
    x = np.concatenate([y, z])
    return jacobian_fd(lambda xx: stacked_field(sys, xx[:sys.m], xx[sys.m:], eps),
                       x, fd)


def stacked_jacobian_dot(sys: FastSlowSystem, y, z, eps: float, wy, wz,
                         fd: FdConfig | None = None) -> np.ndarray:
    """Directional derivative of the stacked Jacobian along (wy, wz)."""
    y, z, eps = _as_state(sys, y, z, eps)
    wy = np.atleast_1d(np.asarray(wy, dtype=float))
    wz = np.atleast_1d(np.asarray(wz, dtype=float))
    if sys.jac_dot is not None:
        return np.asarray(sys.jac_dot(y, z, eps, wy, wz), dtype=float)
    x = np.concatenate([y, z])
    w = np.concatenate([wy, wz])
    flat = directional_derivative_fd(
        lambda xx: stacked_jacobian(sys, xx[:sys.m], xx[sys.m:], eps, fd).ravel(),
        x, w, fd)
    return flat.reshape(sys.size, sys.size)


def fast_jacobian_z(sys: FastSlowSystem, y, z, eps: float,
                    fd: FdConfig | None = None) -> np.ndarray:
    """d g2 / d z, the block that must be invertible near the manifold."""
    y, z, eps = _as_state(sys, y, z, eps)
    if sys.d_z_g2 is not None:
        return np.atleast_2d(np.asarray(sys.d_z_g2(y, z, eps), dtype=float))
    return jacobian_fd(lambda zz: sys.g2(y, zz, eps), z, fd)


def _require_manifold(sys: FastSlowSystem):
    if sys.manifold_h0 is None:
        raise ConfigError(f"{sys.name}: no critical manifold h0 attached")


def expansion_h1(sys: FastSlowSystem, y, fd: FdConfig | None = None) -> np.ndarray:
    """First-order manifold coefficient from the invariance equation.

    h1 = -(d_z g2)^-1 [ d_eps g2 - Dh0 g1 ]   at (y, h0(y), 0).
    """
    _require_manifold(sys)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z0 = np.atleast_1d(np.asarray(sys.manifold_h0(y), dtype=float))
    dzg2 = fast_jacobian_z(sys, y, z0, 0.0, fd)
    dh0 = jacobian_fd(lambda yy: sys.manifold_h0(yy), y, fd)
    g10 = np.atleast_1d(np.asarray(sys.g1(y, z0, 0.0), dtype=float))
    if sys.d_eps_g2 is not None:
        deps_g2 = np.atleast_1d(np.asarray(sys.d_eps_g2(y, z0, 0.0), dtype=float))
    else:
        deps_g2 = eps_derivative(lambda e: sys.g2(y, z0, e), order=1)
    rhs = deps_g2 - dh0 @ g10
    return np.atleast_1d(solve_checked(dzg2, -rhs, context="expansion_h1"))


def expansion_h2(sys: FastSlowSystem, y, fd: FdConfig | None = None) -> np.ndarray:
    """Second-order manifold coefficient from the invariance equation.

    Solves, at (y, h0(y), 0),

      (d_z g2) h2 + (1/2)(d_z^2 g2)(h1, h1) + (d_z d_eps g2) h1
        + (1/2)(d_eps^2 g2) - (Dh1) g1 - (Dh0)[(d_z g1) h1 + (d_eps g1)] = 0.

    The sign between (d_z g1) h1 and (d_eps g1) is a plus; it is pinned by a
    test system with nonzero d_eps g1 whose expansion is known by hand
    (tests/test_fastslow.py) and by the invariance residual dropping at third
    order.
    """
    _require_manifold(sys)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z0 = np.atleast_1d(np.asarray(sys.manifold_h0(y), dtype=float))
    h1 = expansion_h1(sys, y, fd)
    dzg2 = fast_jacobian_z(sys, y, z0, 0.0, fd)
    g10 = np.atleast_1d(np.asarray(sys.g1(y, z0, 0.0), dtype=float))
    dh0 = jacobian_fd(lambda yy: sys.manifold_h0(yy), y, fd)
    dh1 = jacobian_fd(lambda yy: expansion_h1(sys, yy, fd), y, fd)

    # (d_z^2 g2)(h1, h1): directional derivative along h1 of (d_z g2) h1
    dz2_h1h1 = directional_derivative_fd(
        lambda zz: fast_jacobian_z(sys, y, zz, 0.0, fd) @ h1, z0, h1, fd)
    # mixed eps-z term applied to h1
    dzdeps_h1 = eps_derivative(
        lambda e: fast_jacobian_z(sys, y, z0, e, fd) @ h1, order=1)
    if sys.d_eps_g2 is not None:
        deps2_g2 = eps_derivative(lambda e: sys.d_eps_g2(y, z0, e), order=1)
    else:
        deps2_g2 = eps_derivative(lambda e: sys.g2(y, z0, e), order=2)
    if sys.d_z_g1 is not None:
        dzg1 = np.atleast_2d(np.asarray(sys.d_z_g1(y, z0, 0.0), dtype=float))
    else:
        dzg1 = jacobian_fd(lambda zz: sys.g1(y, zz, 0.0), z0, fd)
    if sys.d_eps_g1 is not None:
        deps_g1 = np.atleast_1d(np.asarray(sys.d_eps_g1(y, z0, 0.0), dtype=float))
    else:
        deps_g1 = eps_derivative(lambda e: sys.g1(y, z0, e), order=1)

    rhs = (0.5 * dz2_h1h1 + dzdeps_h1 + 0.5 * deps2_g2
           - dh1 @ g10 - dh0 @ (dzg1 @ h1 + deps_g1))
    return np.atleast_1d(solve_checked(dzg2, -rhs, context="expansion_h2"))


def expansion_coeffs(sys: FastSlowSystem, y,
                     fd: FdConfig | None = None) -> ExpansionCoeffs:
    """h0, h1, h2 at y, computed generically from the invariance equation."""
    _require_manifold(sys)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return ExpansionCoeffs(
        h0=np.atleast_1d(np.asarray(sys.manifold_h0(y), dtype=float)),
        h1=expansion_h1(sys, y, fd),
        h2=expansion_h2(sys, y, fd),
    )


def series_eval(coeffs: ExpansionCoeffs, eps: float, order: int = 2) -> np.ndarray:
    """Evaluate the truncated expansion h0 + eps h1 + ... up to eps^order."""
    if order not in (0, 1, 2):
        raise ConfigError(f"series_eval: order must be 0, 1 or 2, got {order}")
    out = coeffs.h0.copy()
    if order >= 1:
        out = out + eps * coeffs.h1
    if order >= 2:
        out = out + eps * eps * coeffs.h2
    return out


def invariance_residual(sys: FastSlowSystem, h_fn: Callable, y, eps: float,
                        fd: FdConfig | None = None) -> float:
    """Max-norm defect of z = h_fn(y) in the invariance equation at eps."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    h = np.atleast_1d(np.asarray(h_fn(y), dtype=float))
    dh = jacobian_fd(lambda yy: h_fn(yy), y, fd)
    g2v = np.atleast_1d(np.asarray(sys.g2(y, h, eps), dtype=float))
    g1v = np.atleast_1d(np.asarray(sys.g1(y, h, eps), dtype=float))
    return float(np.max(np.abs(g2v - eps * (dh @ g1v))))


def hyperbolicity_margin(sys: FastSlowSystem, y, fd: FdConfig | None = None,
                         *, gap_tol: float = 1e-8) -> float:
    """Attraction margin of the critical manifold at y.

    Returns -max Re(eig(d_z g2)) at (y, h0(y), 0); raises SpectralGapError
    when the fast block is not uniformly attracting there.
    """
    _require_manifold(sys)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z0 = np.atleast_1d(np.asarray(sys.manifold_h0(y), dtype=float))
    eigs = np.linalg.eigvals(fast_jacobian_z(sys, y, z0, 0.0, fd))
    margin = -float(np.max(eigs.real))
    if margin <= gap_tol:
        raise SpectralGapError(
            f"{sys.name}: critical manifold is not attracting at y={y} "
            f"(margin {margin:.3e})")
    return margin


# ---------------------------------------------------------------------------
# builtin systems


def mmh_system(kappa: float = 2.0, lam: float = 1.0) -> FastSlowSystem:
    """Michaelis-Menten-Henri substrate/complex kinetics.

    y is the scaled substrate s, z the scaled complex c:

        s' = eps * (-s + (s + kappa - lam) c)
        c' = s - (s + kappa) c

    Requires kappa > lam > 0 so the slow flow is well signed. The critical
    manifold c = s/(s + kappa) and the first two manifold corrections are
    known in closed form and attached as references.
    """
    kappa = float(kappa)
    lam = float(lam)
    if not (kappa > lam > 0.0):
        raise ConfigError(
            f"mmh_system: requires kappa > lam > 0, got kappa={kappa}, lam={lam}")

    def g1(y, z, eps):
        s, c = y[0], z[0]
        return np.array([-s + (s + kappa - lam) * c])

    def g2(y, z, eps):
        s, c = y[0], z[0]
        return np.array([s - (s + kappa) * c])

    def jac_dot(y, z, eps, wy, wz):
        ws, wc = wy[0], wz[0]
        return np.array([[eps * wc, eps * ws], [-wc, -ws]])

    def coeffs(y):
        s = y[0]
        p = s + kappa
        h0 = s / p
        h1 = kappa * lam * s / p ** 4
        h2 = kappa * lam * s * (2.0 * kappa * lam - 3.0 * lam * s
                                - kappa * s - kappa ** 2) / p ** 7
        return ExpansionCoeffs(np.array([h0]), np.array([h1]), np.array([h2]))

    return FastSlowSystem(
        name=f"mmh(kappa={kappa:g},lam={lam:g})", m=1, n=1, g1=g1, g2=g2,
        d_y_g1=lambda y, z, eps: np.array([[z[0] - 1.0]]),
        d_z_g1=lambda y, z, eps: np.array([[y[0] + kappa - lam]]),
        d_eps_g1=lambda y, z, eps: np.array([0.0]),
        d_y_g2=lambda y, z, eps: np.array([[1.0 - z[0]]]),
        d_z_g2=lambda y, z, eps: np.array([[-(y[0] + kappa)]]),
        d_eps_g2=lambda y, z, eps: np.array([0.0]),
        jac_dot=jac_dot,
        manifold_h0=lambda y: np.array([y[0] / (y[0] + kappa)]),
        manifold_coeffs=coeffs,
    )


def linear_system() -> FastSlowSystem:
    """Fully linear benchmark: y' = -eps y, z' = -z + eps y.

    The slow manifold is exact, z = eps y / (1 - eps), so every coefficient
    is known: (h0, h1, h2) = (0, y, y). The critical manifold is linear,
    which makes the spectral-subspace method exact as well.
    """

    def coeffs(y):
        return ExpansionCoeffs(np.zeros(1), np.array([y[0]]), np.array([y[0]]))

    return FastSlowSystem(
        name="linear", m=1, n=1,
        g1=lambda y, z, eps: np.array([-y[0]]),
        g2=lambda y, z, eps: np.array([-z[0] + eps * y[0]]),
        d_y_g1=lambda y, z, eps: np.array([[-1.0]]),
        d_z_g1=lambda y, z, eps: np.array([[0.0]]),
        d_eps_g1=lambda y, z, eps: np.array([0.0]),
        d_y_g2=lambda y, z, eps: np.array([[eps]]),
        d_z_g2=lambda y, z, eps: np.array([[-1.0]]),
        d_eps_g2=lambda y, z, eps: np.array([y[0]]),
        jac_dot=lambda y, z, eps, wy, wz: np.zeros((2, 2)),
        manifold_h0=lambda y: np.zeros(1),
        manifold_coeffs=coeffs,
    )


def quad_system() -> FastSlowSystem:
    """Quadratic benchmark with a curved critical manifold and eps-coupled slow
    dynamics: y' = eps(-y + eps z), z' = -z + y^2 + eps y.

    Hand expansion of the invariance equation gives h0 = y^2,
    h1 = y + 2y^2, h2 = y + 4y^2 - 2y^3. The d_eps g1 term is nonzero here,
    which is exactly what pins the sign convention in expansion_h2.
    """

    def coeffs(y):
        v = y[0]
        return ExpansionCoeffs(np.array([v * v]),
                               np.array([v + 2.0 * v * v]),
                               np.array([v + 4.0 * v * v - 2.0 * v ** 3]))

    return FastSlowSystem(
        name="quad", m=1, n=1,
        g1=lambda y, z, eps: np.array([-y[0] + eps * z[0]]),
        g2=lambda y, z, eps: np.array([-z[0] + y[0] ** 2 + eps * y[0]]),
        d_y_g1=lambda y, z, eps: np.array([[-1.0]]),
        d_z_g1=lambda y, z, eps: np.array([[eps]]),
        d_eps_g1=lambda y, z, eps: np.array([z[0]]),
        d_y_g2=lambda y, z, eps: np.array([[2.0 * y[0] + eps]]),
        d_z_g2=lambda y, z, eps: np.array([[-1.0]]),
        d_eps_g2=lambda y, z, eps: np.array([y[0]]),
        jac_dot=lambda y, z, eps, wy, wz: np.array([[0.0, 0.0],
                                                    [2.0 * wy[0], 0.0]]),
        manifold_h0=lambda y: np.array([y[0] ** 2]),
        manifold_coeffs=coeffs,
    )


BUILTIN_SYSTEMS = ("mmh", "linear", "quad")


def builtin_system(kind: str, **params) -> FastSlowSystem:
    """Construct a builtin system by name. Extra params only apply to mmh."""
    if kind == "mmh":
        return mmh_system(**params)
    if params:
        raise ConfigError(f"builtin_system: {kind} takes no parameters")
    if kind == "linear":
        return linear_system()
    if kind == "quad":
        return quad_system()
    raise ConfigError(
        f"builtin_system: unknown kind {kind!r}, expected one of {BUILTIN_SYSTEMS}")


def integrate(sys: FastSlowSystem, y0, z0, eps: float, t_end: float,
              *, num_points: int = 201, rtol: float = 1e-8,
              atol: float = 1e-10, max_steps: int = 200_000) -> Trajectory:
    """Integrate the fast-time system from (y0, z0) over [0, t_end].

    Samples are returned on a uniform grid of num_points. t_end = 0 returns
    the single initial sample without touching the integrator. Integrator
    failure or a blown step budget raises StiffnessError with advice, since
    on these systems that is almost always a time-scale problem.
    """
    y0, z0, eps = _as_state(sys, y0, z0, eps)
    t_end = float(t_end)
    if t_end < 0.0:
        raise ConfigError(f"integrate: t_end must be >= 0, got {t_end}")
    if num_points < 1:
        raise ConfigError("integrate: num_points must be >= 1")
    if t_end == 0.0:
        return Trajectory(t=np.zeros(1), y=y0[np.newaxis, :], z=z0[np.newaxis, :])

    def rhs(t, x):
        return stacked_field(sys, x[:sys.m], x[sys.m:], eps)

    t_eval = np.linspace(0.0, t_end, num_points)
    sol = solve_ivp(rhs, (0.0, t_end), np.concatenate([y0, z0]),
                    method="RK45", t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success or sol.nfev > max_steps:
        raise StiffnessError(
            f"integrate: integrator {'failed' if not sol.success else 'exceeded step budget'} "
            f"on {sys.name} (t_end={t_end:g}, eps={eps:g}, nfev={sol.nfev}). "
            "The fast and slow time scales likely differ too strongly for an "
            "explicit method here; reduce t_end, increase eps, or loosen tolerances.")
    x = sol.y.T
    return Trajectory(t=sol.t.copy(), y=x[:, :sys.m].copy(), z=x[:, sys.m:].copy())
