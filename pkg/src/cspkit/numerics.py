"""Shared numerical kernels: finite differences, Newton solves, order fits.

Every derivative, root solve, and convergence fit in the package routes
through this module so that step-size and tolerance policy lives in one
place. Tolerances are expressed in terms of machine epsilon where they are
roundoff-driven.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

EPS = float(np.finfo(float).eps)
SQRT_EPS = EPS ** 0.5
CBRT_EPS = EPS ** (1.0 / 3.0)
QUARTIC_EPS = EPS ** 0.25

__all__ = [
    "EPS",
    "SQRT_EPS",
    "CBRT_EPS",
    "QUARTIC_EPS",
    "ToolkitError",
    "ConfigError",
    "DomainError",
    "SingularMatrixError",
    "SpectralGapError",
    "InsufficientDataError",
    "ConvergenceError",
    "StiffnessError",
    "FdConfig",
    "NewtonConfig",
    "NewtonResult",
    "OrderFit",
    "jacobian_fd",
    "directional_derivative_fd",
    "eps_derivative",
    "newton_solve",
    "solve_checked",
    "fit_order",
    "series_coefficient",
]


class ToolkitError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigError(ToolkitError):
    """Invalid configuration value or structure."""


class DomainError(ToolkitError):
    """Evaluation left the domain of definition (non-finite values, eps < 0)."""


class SingularMatrixError(ToolkitError):
    """A matrix that must be inverted is singular or hopelessly conditioned."""


class SpectralGapError(ToolkitError):
    """The fast/slow spectral gap needed to split a spectrum is absent."""


class InsufficientDataError(ToolkitError):
    """Too few usable samples to fit an order."""


class StiffnessError(ToolkitError):
    """Time integration failed in a way that points at stiffness."""


class ConvergenceError(ToolkitError):
    """Iteration ran out of budget. Carries the best iterate seen."""

    def __init__(self, message: str, *, best_x=None, best_residual=None,
                 iterations: int = 0):
        super().__init__(message)
        self.best_x = best_x
        self.best_residual = best_residual
        self.iterations = iterations


@dataclass(frozen=True)
class FdConfig:
    """Finite-difference policy.

    rel_step is relative to max(|coordinate|, abs_floor); the default is the
    cube root of machine epsilon, the optimum for plain central differences.
    With richardson=True a second evaluation at half the step removes the
    leading O(h^2) error term, leaving O(h^4) at roughly double the cost; the
    extrapolated stencil optimizes at a larger base step (about eps^0.2), so
    the effective step is widened by a fixed factor in that mode. Overriding
    rel_step scales both modes proportionally.
    """

    rel_step: float = CBRT_EPS
    abs_floor: float = 1.0
    richardson: bool = True

    def step_scale(self) -> float:
        if self.richardson:
            return self.rel_step * (EPS ** 0.2 / CBRT_EPS)
        return self.rel_step


@dataclass(frozen=True)
class NewtonConfig:
    residual_tol: float = 1e-12
    max_iterations: int = 25
    max_halvings: int = 8
    cond_limit: float = 1e12


@dataclass(frozen=True)
class NewtonResult:
    x: np.ndarray
    residual: float
    iterations: int


@dataclass(frozen=True)
class OrderFit:
    """Least-squares slope of log10(error) against log10(eps)."""

    slope: float
    intercept: float
    eps_used: tuple
    errors_used: tuple
    n_excluded: int


def _check_finite(arr: np.ndarray, context: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{context}: non-finite values encountered")
    return arr


def _fd_jacobian_once(f, x, steps):
    cols = []
    for i, h in enumerate(steps):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = np.atleast_1d(np.asarray(f(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(f(xm), dtype=float))
        cols.append((fp - fm) / (2.0 * h))
    return np.stack(cols, axis=-1)


def jacobian_fd(f: Callable, x, config: FdConfig | None = None) -> np.ndarray:
    """Dense Jacobian of ``f`` at ``x`` by central differences.

    Parameters
    ----------
    f : callable
        Maps a 1-d array to a 1-d array (scalars are promoted).
    x : array_like
        Point of evaluation, 1-d.
    config : FdConfig, optional

    Returns
    -------
    ndarray of shape (len(f(x)), len(x)).
    """
    cfg = config or FdConfig()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    steps = cfg.step_scale() * np.maximum(np.abs(x), cfg.abs_floor)
    jac = _fd_jacobian_once(f, x, steps)
    if cfg.richardson:
        jac_half = _fd_jacobian_once(f, x, steps / 2.0)
        jac = (4.0 * jac_half - jac) / 3.0
    return _check_finite(jac, "jacobian_fd")


def directional_derivative_fd(f: Callable, x, v,
                              config: FdConfig | None = None) -> np.ndarray:
    """Derivative of ``f`` at ``x`` along the (unnormalized) direction ``v``."""
    cfg = config or FdConfig()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    vscale = float(np.max(np.abs(v)))
    if vscale == 0.0:
        return np.zeros_like(np.atleast_1d(np.asarray(f(x), dtype=float)))
    h = cfg.step_scale() * max(float(np.max(np.abs(x))), cfg.abs_floor) / vscale

    def central(step):
        fp = np.atleast_1d(np.asarray(f(x + step * v), dtype=float))
        fm = np.atleast_1d(np.asarray(f(x - step * v), dtype=float))
        return (fp - fm) / (2.0 * step)

    d = central(h)
    if cfg.richardson:
        d = (4.0 * central(h / 2.0) - d) / 3.0
    return _check_finite(d, "directional_derivative_fd")


def eps_derivative(f: Callable[[float], object], order: int = 1,
                   step: float | None = None) -> np.ndarray:
    """One-sided derivative of ``f`` at 0 for functions defined on [0, inf).

    order=1 uses the third-order four-point forward stencil, order=2 the
    second-order one. The default step balances truncation against roundoff
    for both stencils.
    """
    if order not in (1, 2):
        raise ConfigError(f"eps_derivative: order must be 1 or 2, got {order}")
    h = QUARTIC_EPS if step is None else float(step)
    if h <= 0.0:
        raise ConfigError("eps_derivative: step must be positive")
    f0, f1, f2, f3 = (np.asarray(f(i * h), dtype=float) for i in range(4))
    if order == 1:
        out = (-11.0 * f0 + 18.0 * f1 - 9.0 * f2 + 2.0 * f3) / (6.0 * h)
    else:
        out = (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h)
    return _check_finite(out, "eps_derivative")


def solve_checked(a, b, *, cond_limit: float = 1e12, context: str = "solve"):
    """np.linalg.solve with an explicit conditioning guard."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrixError(
            f"{context}: matrix is singular or ill conditioned (cond={cond:.3g})")
    return np.linalg.solve(a, b)


def newton_solve(fun: Callable, x0, jac: Callable | None = None,
                 config: NewtonConfig | None = None,
                 fd: FdConfig | None = None) -> NewtonResult:
    """Damped Newton iteration on ``fun(x) = 0``.

    Full steps are tried first; on residual increase the step is halved up to
    ``max_halvings`` times and the best trial is kept. The residual norm is
    the max norm. Raises ConvergenceError (with the best iterate attached),
    SingularMatrixError, or DomainError.
    """
    cfg = config or NewtonConfig()
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if jac is None:
        jac = lambda xx: jacobian_fd(fun, xx, fd)  # noqa: E731

    def residual(xx):
        return _check_finite(np.atleast_1d(np.asarray(fun(xx), dtype=float)),
                             "newton_solve residual")

    r = residual(x)
    rnorm = float(np.max(np.abs(r)))
    best_x, best_r = x.copy(), rnorm
    for it in range(1, cfg.max_iterations + 1):
        if rnorm <= cfg.residual_tol:
            return NewtonResult(x=x, residual=rnorm, iterations=it - 1)
        jmat = np.atleast_2d(np.asarray(jac(x), dtype=float))
        step = solve_checked(jmat, r, cond_limit=cfg.cond_limit,
                             context="newton_solve")
        scale = 1.0
        trial_x, trial_r, trial_norm = None, None, np.inf
        for _ in range(cfg.max_halvings + 1):
            cand = x - scale * step
            cr = residual(cand)
            cn = float(np.max(np.abs(cr)))
            if cn < trial_norm:
                trial_x, trial_r, trial_norm = cand, cr, cn
            if cn < rnorm:
                break
            scale *= 0.5
        x, r, rnorm = trial_x, trial_r, trial_norm
        if rnorm < best_r:
            best_x, best_r = x.copy(), rnorm
    if rnorm <= cfg.residual_tol:
        return NewtonResult(x=x, residual=rnorm, iterations=cfg.max_iterations)
    raise ConvergenceError(
        f"newton_solve: no convergence in {cfg.max_iterations} iterations "
        f"(best residual {best_r:.3e})",
        best_x=best_x, best_residual=best_r, iterations=cfg.max_iterations)


def fit_order(eps_values: Sequence[float], errors: Sequence[float],
              *, floor_factor: float = 100.0) -> OrderFit:
    """Fit error ~ C * eps^p and return p.

    Samples whose error sits below ``floor_factor * machine_eps`` are treated
    as roundoff-dominated and excluded from the fit (they would flatten the
    slope without carrying information). At least 3 samples must be supplied
    and at least 2 must survive the exclusion, otherwise
    InsufficientDataError is raised.
    """
    eps_arr = np.asarray(list(eps_values), dtype=float)
    err_arr = np.asarray(list(errors), dtype=float)
    if eps_arr.shape != err_arr.shape or eps_arr.ndim != 1:
        raise ConfigError("fit_order: eps_values and errors must be 1-d and equal length")
    if eps_arr.size < 3:
        raise InsufficientDataError(
            f"fit_order: need at least 3 samples, got {eps_arr.size}")
    if np.any(eps_arr <= 0.0) or np.any(~np.isfinite(err_arr)) or np.any(err_arr < 0.0):
        raise DomainError("fit_order: eps must be positive and errors finite, >= 0")
    floor = floor_factor * EPS
    keep = err_arr > floor
    n_excluded = int(np.sum(~keep))
    if np.sum(keep) < 2:
        raise InsufficientDataError(
            f"fit_order: only {int(np.sum(keep))} of {eps_arr.size} samples above "
            f"the roundoff floor {floor:.2e}")
    coeffs = np.polyfit(np.log10(eps_arr[keep]), np.log10(err_arr[keep]), 1)
    return OrderFit(slope=float(coeffs[0]), intercept=float(coeffs[1]),
                    eps_used=tuple(eps_arr[keep]), errors_used=tuple(err_arr[keep]),
                    n_excluded=n_excluded)


def series_coefficient(f: Callable[[float], float], order: int,
                       *, eps0: float = 1e-2, ratio: float = 2.0,
                       levels: int = 4) -> float:
    """Taylor coefficient of a scalar function at 0 by Richardson extrapolation.

    order=1 returns f'(0), order=2 returns the coefficient of eps^2 (i.e.
    f''(0)/2). Base estimates are one-sided divided differences at
    eps0 / ratio^i whose error expands in integer powers of eps, so a Neville
    table in those powers converges quickly; ``levels`` controls the table
    depth.
    """
    if order not in (1, 2):
        raise ConfigError(f"series_coefficient: order must be 1 or 2, got {order}")
    if levels < 2:
        raise ConfigError("series_coefficient: need at least 2 levels")
    f0 = float(f(0.0))
    estimates = []
    for i in range(levels):
        e = eps0 / ratio ** i
        if order == 1:
            estimates.append((float(f(e)) - f0) / e)
        else:
            # pairwise second difference: kills the linear term exactly
            d1 = float(f(e)) - f0
            d2 = float(f(e / 2.0)) - f0
            estimates.append(2.0 * (d1 - 2.0 * d2) / (e * e))
    table = estimates
    for j in range(1, levels):
        fac = ratio ** j
        table = [(fac * table[i + 1] - table[i]) / (fac - 1.0)
                 for i in range(len(table) - 1)]
    out = float(table[0])
    if not np.isfinite(out):
        raise DomainError("series_coefficient: non-finite extrapolation")
    return out
