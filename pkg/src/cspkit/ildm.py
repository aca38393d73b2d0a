"""Intrinsic low-dimensional manifold solver.

The defining condition: at a manifold point the field must have no component
along the fast invariant subspace of the local Jacobian.  An ordered real
Schur factorization splits the spectrum into a slow cluster and a fast
cluster; the rows of the orthogonal factor spanning the fast subspace, applied
to the field, give the equations solved for the fast coordinates.

The Jacobian is taken in the fast time scale, where the slow rows carry the
small parameter.  Rescaling time multiplies the whole Jacobian by a positive
scalar, which moves every eigenvalue by the same factor and leaves both the
invariant subspaces and the slow/fast ordering unchanged, so either convention
yields the same manifold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .csp import CspChain
from .fastslow import FastSlowSystem, stacked_field, stacked_jacobian
from .numerics import (
    ConfigError,
    FdConfig,
    NewtonConfig,
    SpectralGapError,
    jacobian_fd,
    newton_solve,
)

__all__ = [
    "IldmResult",
    "SchurSplit",
    "degraded_chain",
    "ildm_solve",
    "schur_ordered",
]


@dataclass(frozen=True)
class SchurSplit:
    """Ordered real Schur factorization with the slow cluster leading."""

    q: np.ndarray
    t: np.ndarray
    eigenvalues: np.ndarray
    n_slow: int
    gap: float

    @property
    def slow_columns(self) -> np.ndarray:
        return self.q[:, : self.n_slow]

    @property
    def fast_columns(self) -> np.ndarray:
        return self.q[:, self.n_slow:]


def schur_ordered(mat: np.ndarray, n_slow: int, *, gap_tol: float = 1e-8) -> SchurSplit:
    """Real Schur form of mat with the n_slow slowest eigenvalues first.

    Slow means largest real part (least negative).  Raises SpectralGapError
    when the real-part gap between the two clusters is below gap_tol, since
    the split is then ill defined.
    """
    mat = np.asarray(mat, dtype=float)
    size = mat.shape[0]
    if mat.shape != (size, size):
        raise SpectralGapError(f"expected a square matrix, got {mat.shape}")
    if not 0 < n_slow < size:
        raise SpectralGapError(f"n_slow={n_slow} must split a {size}x{size} matrix")

    reals = np.sort(np.linalg.eigvals(mat).real)[::-1]
    gap = float(reals[n_slow - 1] - reals[n_slow])
    if gap < gap_tol:
        raise SpectralGapError(
            f"slow/fast real-part gap {gap:.3e} below tolerance {gap_tol:.1e}")
    threshold = 0.5 * (reals[n_slow - 1] + reals[n_slow])

    t, q, sdim = scipy.linalg.schur(
        mat, output="real", sort=lambda re, im: re > threshold)
    if sdim != n_slow:
        raise SpectralGapError(
            f"clustering selected {sdim} slow eigenvalues, expected {n_slow}")

    # Schur columns are only defined up to sign; pin each so its largest
    # magnitude entry is positive, keeping the factorization smooth in the
    # state and the downstream Newton jacobians representative.
    signs = np.ones(size)
    for j in range(size):
        k = int(np.argmax(np.abs(q[:, j])))
        if q[k, j] < 0.0:
            signs[j] = -1.0
    s = np.diag(signs)
    q = q @ s
    t = s @ t @ s

    if not np.allclose(q @ t @ q.T, mat, atol=1e-10 * max(1.0, np.abs(mat).max())):
        raise SpectralGapError("ordered Schur reconstruction check failed")

    eigs = np.linalg.eigvals(t)
    return SchurSplit(q=q, t=t, eigenvalues=eigs, n_slow=n_slow, gap=gap)


@dataclass(frozen=True)
class IldmResult:
    z: np.ndarray
    residual: float
    iterations: int
    gap: float


def ildm_solve(
    sys: FastSlowSystem,
    y,
    eps: float,
    *,
    z0=None,
    newton: NewtonConfig | None = None,
    fd: FdConfig | None = None,
    gap_tol: float = 1e-8,
) -> IldmResult:
    """Solve the fast-subspace orthogonality condition for z at fixed y.

    The residual is Qf(y, z)^T g(y, z, eps) where Qf spans the fast invariant
    subspace of the local stacked Jacobian.  The Schur factor is recomputed at
    every trial point; its jacobian is taken by finite differences because the
    factor itself depends on z.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    newton = newton or NewtonConfig()
    fd = fd or FdConfig()

    if z0 is not None:
        z_init = np.atleast_1d(np.asarray(z0, dtype=float))
    elif sys.manifold_h0 is not None:
        z_init = np.atleast_1d(np.asarray(sys.manifold_h0(y), dtype=float))
    else:
        raise ConfigError(
            "no initial fast coordinates: pass z0 or give the system a "
            "critical manifold")

    gap_seen = [0.0]

    def residual(z: np.ndarray) -> np.ndarray:
        jac = stacked_jacobian(sys, y, z, eps, fd)
        split = schur_ordered(jac, sys.m, gap_tol=gap_tol)
        gap_seen[0] = split.gap
        field = stacked_field(sys, y, z, eps)
        return split.fast_columns.T @ field

    result = newton_solve(
        residual, z_init,
        jac=lambda z: jacobian_fd(residual, z, fd),
        config=newton)
    return IldmResult(z=result.x, residual=result.residual,
                      iterations=result.iterations, gap=gap_seen[0])


def degraded_chain(sys: FastSlowSystem, q_max: int = 2, **kwargs) -> CspChain:
    """Refinement chain with the basis transport term dropped.

    Sharing a module with the subspace solver is deliberate: both methods
    settle on manifolds that differ from the invariant one at the same order,
    and experiments compare them side by side.
    """
    return CspChain(sys, "csp-no-dt", q_max=q_max, **kwargs)
