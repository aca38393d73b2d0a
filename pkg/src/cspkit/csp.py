"""Iterative basis refinement for fast/slow separation.

The refinement state is a pair of mutually inverse matrix functions
A(y, z, eps) (columns: amplitudes, fast block first) and B = A^-1 (rows:
amplitudes). The object being iterated on is

    Lambda = B (Dg) A - B dA/dt,

where dA/dt is the derivative of A along the flow of the stacked field.
Lambda is stored in amplitude ordering with the fast-fast block leading.
One refinement level computes

    U = (Lambda^ff)^-1 Lambda^fs        (n x m)
    L = Lambda^sf (Lambda^ff)^-1        (m x n)

and applies them via nilpotent corner embeddings. Three schemes share the
machinery:

  "full"       A -> A (I - U^)(I + L^),  B -> (I - L^)(I + U^) B
  "one-step"   A -> A (I - U^),          B -> (I + U^) B
  "csp-no-dt"  one-step updates, but Lambda drops the dA/dt transport term

The fast amplitude rows of B, frozen at the previous level's manifold point,
define the level-q manifold condition solved by cspm_solve.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fastslow import (
    FastSlowSystem,
    stacked_field,
    stacked_jacobian,
    stacked_jacobian_dot,
)
from .numerics import (
    ConfigError,
    FdConfig,
    NewtonConfig,
    directional_derivative_fd,
    jacobian_fd,
    newton_solve,
    solve_checked,
)

__all__ = [
    "SCHEMES",
    "BlockBasis",
    "LambdaBlocks",
    "CspmResult",
    "TransitionMatrix",
    "CspChain",
    "initial_basis",
    "embed_upper",
    "embed_lower",
    "lambda_assemble",
    "update_matrices",
    "refine",
    "update_full",
    "update_one_step",
    "transition_matrix",
    "lie_bracket_check",
]

SCHEMES = ("full", "one-step", "csp-no-dt")


@dataclass(frozen=True)
class BlockBasis:
    """One refinement level of the amplitude basis.

    a_fn/b_fn evaluate A and B at (y, z, eps). a_dot_fn/b_dot_fn, when
    present, evaluate the exact derivative of A and B along the flow; they
    exist one level past a constant basis whenever the system provides
    jac_dot, and lambda_assemble falls back to directional finite differences
    otherwise. constant marks level-0 bases, whose transport term vanishes
    identically. u_sum_fn accumulates the one-step corner corrections, so
    the explicit-projector form of the same level stays available.
    """

    m: int
    n: int
    level: int
    scheme: str
    a_fn: Callable
    b_fn: Callable
    constant: bool = False
    a_dot_fn: Optional[Callable] = None
    b_dot_fn: Optional[Callable] = None
    u_sum_fn: Optional[Callable] = None

    @property
    def size(self) -> int:
        return self.m + self.n


@dataclass(frozen=True)
class LambdaBlocks:
    """Amplitude-ordered Lambda with the fast-fast block leading."""

    matrix: np.ndarray
    m: int
    n: int

    @classmethod
    def from_matrix(cls, mat: np.ndarray, m: int, n: int) -> "LambdaBlocks":
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (m + n, m + n):
            raise ConfigError(f"LambdaBlocks: expected shape {(m + n, m + n)}, "
                              f"got {mat.shape}")
        return cls(matrix=mat, m=m, n=n)

    @property
    def ff(self) -> np.ndarray:
        return self.matrix[:self.n, :self.n]

    @property
    def fs(self) -> np.ndarray:
        return self.matrix[:self.n, self.n:]

    @property
    def sf(self) -> np.ndarray:
        return self.matrix[self.n:, :self.n]

    @property
    def ss(self) -> np.ndarray:
        return self.matrix[self.n:, self.n:]


@dataclass(frozen=True)
class CspmResult:
    z: np.ndarray
    residual: float
    iterations: int
    row: np.ndarray


@dataclass(frozen=True)
class TransitionMatrix:
    """Product B_full(q) A_onestep(q) on the level q-1 manifold."""

    matrix: np.ndarray
    m: int
    n: int

    @property
    def ff(self) -> np.ndarray:
        return self.matrix[:self.n, :self.n]

    @property
    def fs(self) -> np.ndarray:
        return self.matrix[:self.n, self.n:]

    @property
    def sf(self) -> np.ndarray:
        return self.matrix[self.n:, :self.n]

    @property
    def ss(self) -> np.ndarray:
        return self.matrix[self.n:, self.n:]


def embed_upper(u: np.ndarray, m: int, n: int) -> np.ndarray:
    """Corner embedding of the (n, m) fast-to-slow correction; nilpotent."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape != (n, m):
        raise ConfigError(f"embed_upper: expected shape {(n, m)}, got {u.shape}")
    out = np.zeros((m + n, m + n))
    out[:n, n:] = u
    return out


def embed_lower(low: np.ndarray, m: int, n: int) -> np.ndarray:
    """Corner embedding of the (m, n) slow-to-fast correction; nilpotent."""
    low = np.atleast_2d(np.asarray(low, dtype=float))
    if low.shape != (m, n):
        raise ConfigError(f"embed_lower: expected shape {(m, n)}, got {low.shape}")
    out = np.zeros((m + n, m + n))
    out[n:, :n] = low
    return out


def initial_basis(m: int, n: int, scheme: str = "one-step", *,
                  a12: np.ndarray | None = None,
                  a21: np.ndarray | None = None,
                  a22: np.ndarray | None = None) -> BlockBasis:
    """Constant level-0 basis with a vanishing slow-row/fast-column block.

    A0 = [[0, A12], [A21, A22]] in (state rows) x (amplitude columns, fast
    first) layout. The zero corner makes the closed-form inverse

        B0 = [[-A21^-1 A22 A12^-1, A21^-1], [A12^-1, 0]]

    valid; A12 and A21 must be invertible. Defaults give the pure coordinate
    swap A0 = B0 = [[0, I], [I, 0]].
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"initial_basis: unknown scheme {scheme!r}")
    a12 = np.eye(m) if a12 is None else np.atleast_2d(np.asarray(a12, dtype=float))
    a21 = np.eye(n) if a21 is None else np.atleast_2d(np.asarray(a21, dtype=float))
    a22 = np.zeros((n, m)) if a22 is None else np.atleast_2d(np.asarray(a22, dtype=float))
    if a12.shape != (m, m) or a21.shape != (n, n) or a22.shape != (n, m):
        raise ConfigError("initial_basis: block shape mismatch")
    a12_inv = solve_checked(a12, np.eye(m), context="initial_basis A12")
    a21_inv = solve_checked(a21, np.eye(n), context="initial_basis A21")

    amat = np.zeros((m + n, m + n))
    amat[:m, n:] = a12
    amat[m:, :n] = a21
    amat[m:, n:] = a22

    bmat = np.zeros((m + n, m + n))
    bmat[:n, :m] = -a21_inv @ a22 @ a12_inv
    bmat[:n, m:] = a21_inv
    bmat[n:, :m] = a12_inv

    return BlockBasis(
        m=m, n=n, level=0, scheme=scheme,
        a_fn=lambda y, z, eps: amat,
        b_fn=lambda y, z, eps: bmat,
        constant=True,
    )


def _a_dot_fd(sys: FastSlowSystem, basis: BlockBasis, y, z, eps: float,
              fd: FdConfig) -> np.ndarray:
    size = basis.size
    f = stacked_field(sys, y, z, eps)
    x = np.concatenate([np.atleast_1d(y), np.atleast_1d(z)]).astype(float)
    flat = directional_derivative_fd(
        lambda xx: basis.a_fn(xx[:basis.m], xx[basis.m:], eps).ravel(), x, f, fd)
    return flat.reshape(size, size)


def lambda_assemble(sys: FastSlowSystem, basis: BlockBasis, y, z, eps: float,
                    fd: FdConfig | None = None,
                    include_da_dt: bool = True) -> LambdaBlocks:
    """Assemble Lambda = B (Dg) A - B dA/dt at a point.

    The transport term is skipped exactly for constant bases and skipped by
    request for the degraded scheme (include_da_dt=False). The basis's exact
    a_dot_fn is preferred; otherwise dA/dt comes from a directional finite
    difference along the flow.
    """
    fd = fd or FdConfig()
    a = basis.a_fn(y, z, eps)
    b = basis.b_fn(y, z, eps)
    lam = b @ stacked_jacobian(sys, y, z, eps, fd) @ a
    if include_da_dt and not basis.constant:
        if basis.a_dot_fn is not None:
            a_dot = basis.a_dot_fn(y, z, eps)
        else:
            a_dot = _a_dot_fd(sys, basis, y, z, eps, fd)
        lam = lam - b @ a_dot
    return LambdaBlocks.from_matrix(lam, basis.m, basis.n)


def update_matrices(lb: LambdaBlocks) -> tuple[np.ndarray, np.ndarray]:
    """Corner corrections (U, L) of one refinement level.

    U = (Lambda^ff)^-1 Lambda^fs and L = Lambda^sf (Lambda^ff)^-1. The
    fast-fast block must be invertible, which is the working expression of
    the spectral-gap assumption.
    """
    u = solve_checked(lb.ff, lb.fs, context="update_matrices U")
    low = solve_checked(lb.ff.T, lb.sf.T, context="update_matrices L").T
    return np.atleast_2d(u), np.atleast_2d(low)


def _mats_with_dot(sys, basis, fd, include_dt):
    """U, L and their exact flow derivatives; valid for constant bases only."""
    m, n = basis.m, basis.n

    def compute(y, z, eps):
        a = basis.a_fn(y, z, eps)
        b = basis.b_fn(y, z, eps)
        lam = b @ stacked_jacobian(sys, y, z, eps, fd) @ a
        f = stacked_field(sys, y, z, eps)
        jd = stacked_jacobian_dot(sys, y, z, eps, f[:m], f[m:], fd)
        lam_dot = b @ jd @ a
        ff, fs, sf = lam[:n, :n], lam[:n, n:], lam[n:, :n]
        dff, dfs, dsf = lam_dot[:n, :n], lam_dot[:n, n:], lam_dot[n:, :n]
        u = solve_checked(ff, fs, context="refine U")
        low = solve_checked(ff.T, sf.T, context="refine L").T
        u_dot = solve_checked(ff, dfs - dff @ u, context="refine dU/dt")
        low_dot = solve_checked(ff.T, (dsf - low @ dff).T, context="refine dL/dt").T
        return (np.atleast_2d(u), np.atleast_2d(low),
                np.atleast_2d(u_dot), np.atleast_2d(low_dot))

    return compute


def refine(sys: FastSlowSystem, basis: BlockBasis,
           fd: FdConfig | None = None) -> BlockBasis:
    """Produce the next refinement level of a basis, following its scheme."""
    fd = fd or FdConfig()
    m, n, size = basis.m, basis.n, basis.size
    include_dt = basis.scheme != "csp-no-dt"
    eye = np.eye(size)

    def mats(y, z, eps):
        lb = lambda_assemble(sys, basis, y, z, eps, fd, include_da_dt=include_dt)
        return update_matrices(lb)

    # exact transport derivatives propagate one level past a constant basis
    can_dot = include_dt and basis.constant and sys.jac_dot is not None
    mats_dot = _mats_with_dot(sys, basis, fd, include_dt) if can_dot else None

    if basis.scheme in ("one-step", "csp-no-dt"):
        def a_fn(y, z, eps):
            u, _ = mats(y, z, eps)
            return basis.a_fn(y, z, eps) @ (eye - embed_upper(u, m, n))

        def b_fn(y, z, eps):
            u, _ = mats(y, z, eps)
            return (eye + embed_upper(u, m, n)) @ basis.b_fn(y, z, eps)

        def u_sum_fn(y, z, eps):
            u, _ = mats(y, z, eps)
            if basis.u_sum_fn is not None:
                return basis.u_sum_fn(y, z, eps) + u
            return u

        a_dot_fn = b_dot_fn = None
        if can_dot:
            def a_dot_fn(y, z, eps):
                _, _, u_dot, _ = mats_dot(y, z, eps)
                return -(basis.a_fn(y, z, eps) @ embed_upper(u_dot, m, n))

            def b_dot_fn(y, z, eps):
                _, _, u_dot, _ = mats_dot(y, z, eps)
                return embed_upper(u_dot, m, n) @ basis.b_fn(y, z, eps)

        return BlockBasis(m=m, n=n, level=basis.level + 1, scheme=basis.scheme,
                          a_fn=a_fn, b_fn=b_fn, constant=False,
                          a_dot_fn=a_dot_fn, b_dot_fn=b_dot_fn,
                          u_sum_fn=u_sum_fn)

    if basis.scheme == "full":
        def a_fn(y, z, eps):
            u, low = mats(y, z, eps)
            return (basis.a_fn(y, z, eps)
                    @ (eye - embed_upper(u, m, n))
                    @ (eye + embed_lower(low, m, n)))

        def b_fn(y, z, eps):
            u, low = mats(y, z, eps)
            return ((eye - embed_lower(low, m, n))
                    @ (eye + embed_upper(u, m, n))
                    @ basis.b_fn(y, z, eps))

        a_dot_fn = b_dot_fn = None
        if can_dot:
            def a_dot_fn(y, z, eps):
                u, low, u_dot, low_dot = mats_dot(y, z, eps)
                uh, lh = embed_upper(u, m, n), embed_lower(low, m, n)
                udh, ldh = embed_upper(u_dot, m, n), embed_lower(low_dot, m, n)
                return basis.a_fn(y, z, eps) @ (-udh @ (eye + lh) + (eye - uh) @ ldh)

            def b_dot_fn(y, z, eps):
                u, low, u_dot, low_dot = mats_dot(y, z, eps)
                uh, lh = embed_upper(u, m, n), embed_lower(low, m, n)
                udh, ldh = embed_upper(u_dot, m, n), embed_lower(low_dot, m, n)
                return (-ldh @ (eye + uh) + (eye - lh) @ udh) @ basis.b_fn(y, z, eps)

        return BlockBasis(m=m, n=n, level=basis.level + 1, scheme="full",
                          a_fn=a_fn, b_fn=b_fn, constant=False,
                          a_dot_fn=a_dot_fn, b_dot_fn=b_dot_fn)

    raise ConfigError(f"refine: unknown scheme {basis.scheme!r}")


def update_full(sys: FastSlowSystem, basis: BlockBasis,
                fd: FdConfig | None = None) -> BlockBasis:
    if basis.scheme != "full":
        raise ConfigError("update_full: basis does not carry the full scheme")
    return refine(sys, basis, fd)


def update_one_step(sys: FastSlowSystem, basis: BlockBasis,
                    fd: FdConfig | None = None) -> BlockBasis:
    if basis.scheme not in ("one-step", "csp-no-dt"):
        raise ConfigError("update_one_step: basis does not carry a one-step scheme")
    return refine(sys, basis, fd)


class CspChain:
    """Bases of levels 0..q_max for one system and scheme, plus the manifold
    solves they induce.

    The level-q manifold condition is: fast amplitude rows of B at level q,
    frozen at the level q-1 manifold point, applied to the field at the
    unknown point. psi(q, y, eps) solves it by Newton iteration anchored at
    the previous level, so the recursion bottoms out at the critical
    manifold.
    """

    def __init__(self, sys: FastSlowSystem, scheme: str = "one-step",
                 q_max: int = 2, *, fd: FdConfig | None = None,
                 newton: NewtonConfig | None = None,
                 basis0: BlockBasis | None = None):
        if scheme not in SCHEMES:
            raise ConfigError(f"CspChain: unknown scheme {scheme!r}, "
                              f"expected one of {SCHEMES}")
        if not isinstance(q_max, int) or not (0 <= q_max <= 3):
            raise ConfigError(f"CspChain: q_max must be an int in 0..3, got {q_max}")
        self.sys = sys
        self.scheme = scheme
        self.q_max = q_max
        self.fd = fd or FdConfig()
        self.newton = newton or NewtonConfig()
        base = basis0 if basis0 is not None else initial_basis(sys.m, sys.n, scheme)
        if base.scheme != scheme:
            raise ConfigError("CspChain: basis0 scheme does not match chain scheme")
        self.bases = [base]
        for _ in range(q_max):
            self.bases.append(refine(sys, self.bases[-1], self.fd))
        self._cache: dict = {}

    def basis(self, q: int) -> BlockBasis:
        if not (0 <= q <= self.q_max):
            raise ConfigError(f"CspChain: level {q} outside 0..{self.q_max}")
        return self.bases[q]

    def cspm_solve(self, q: int, y, eps: float,
                   z0: np.ndarray | None = None) -> CspmResult:
        """Solve the level-q manifold condition at y."""
        self.basis(q)  # range check
        y = np.atleast_1d(np.asarray(y, dtype=float))
        key = (q, y.tobytes(), float(eps))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if q == 0:
            if z0 is not None:
                anchor = np.atleast_1d(np.asarray(z0, dtype=float))
            elif self.sys.manifold_h0 is not None:
                anchor = np.atleast_1d(np.asarray(self.sys.manifold_h0(y), dtype=float))
            else:
                raise ConfigError(
                    "cspm_solve: q=0 needs a z0 guess or a system manifold_h0")
        else:
            anchor = self.cspm_solve(q - 1, y, eps).z
        rows = self.basis(q).b_fn(y, anchor, eps)[:self.sys.n, :]

        def fun(z):
            return rows @ stacked_field(self.sys, y, z, eps)

        def jac(z):
            if self.sys.d_z_g1 is not None and self.sys.d_z_g2 is not None:
                cols = np.vstack([
                    eps * np.atleast_2d(self.sys.d_z_g1(y, z, eps)),
                    np.atleast_2d(self.sys.d_z_g2(y, z, eps)),
                ])
            else:
                cols = jacobian_fd(
                    lambda zz: stacked_field(self.sys, y, zz, eps), z, self.fd)
            return rows @ cols

        res = newton_solve(fun, anchor, jac=jac, config=self.newton, fd=self.fd)
        out = CspmResult(z=res.x, residual=res.residual,
                         iterations=res.iterations, row=rows)
        self._cache[key] = out
        return out

    def psi(self, q: int, y, eps: float) -> np.ndarray:
        return self.cspm_solve(q, y, eps).z


def transition_matrix(full_chain: CspChain, one_step_chain: CspChain,
                      q: int, y, eps: float) -> TransitionMatrix:
    """Change of basis between the two-step and one-step refinements.

    Both bases are evaluated on the level q-1 manifold (anchored by the full
    chain, where the two manifolds coincide at level 1 they are identical by
    construction). Defined for q >= 1.
    """
    if full_chain.scheme != "full" or one_step_chain.scheme != "one-step":
        raise ConfigError("transition_matrix: needs a full chain and a one-step chain")
    if full_chain.sys is not one_step_chain.sys:
        raise ConfigError("transition_matrix: chains must share the system")
    if q < 1:
        raise ConfigError("transition_matrix: defined for q >= 1")
    z_star = full_chain.psi(q - 1, y, eps)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    bmat = full_chain.basis(q).b_fn(y, z_star, eps)
    amat = one_step_chain.basis(q).a_fn(y, z_star, eps)
    return TransitionMatrix(matrix=bmat @ amat, m=full_chain.sys.m,
                            n=full_chain.sys.n)


def lie_bracket_check(sys: FastSlowSystem, basis: BlockBasis, y, z, eps: float,
                      fd: FdConfig | None = None) -> float:
    """Independent route to Lambda through per-column Lie brackets.

    Column j of B^-1 Lambda is the bracket (Dg) a_j - (Da_j) g, so assembling
    B [a_j, g] columnwise from finite differences of A itself must agree with
    lambda_assemble. Returns the max-norm discrepancy; it bounds both the
    assembly and the transport-derivative path.
    """
    fd = fd or FdConfig()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    m, size = basis.m, basis.size
    x = np.concatenate([y, z])
    a = basis.a_fn(y, z, eps)
    b = basis.b_fn(y, z, eps)
    jac = stacked_jacobian(sys, y, z, eps, fd)
    f = stacked_field(sys, y, z, eps)
    da_flat = jacobian_fd(lambda xx: basis.a_fn(xx[:m], xx[m:], eps).ravel(), x, fd)
    da = da_flat.reshape(size, size, size)  # da[i, j, k] = d A[i, j] / d x[k]
    bracket = jac @ a - np.einsum("ijk,k->ij", da, f)
    lam = lambda_assemble(sys, basis, y, z, eps, fd, include_da_dt=True)
    return float(np.max(np.abs(b @ bracket - lam.matrix)))
