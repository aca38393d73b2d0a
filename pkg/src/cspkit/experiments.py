"""Experiment drivers: convergence studies, method comparisons, trajectories.

Everything here is deterministic. Row order, float formatting and file
contents are fixed functions of the configuration, so reruns are
byte-identical; seeds only enter where a driver explicitly randomizes
(currently nothing does, the seed is reserved for user systems).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .csp import CspChain
from .fastslow import (
    FastSlowSystem,
    builtin_system,
    expansion_coeffs,
    integrate,
    series_eval,
)
from .ildm import ildm_solve
from .numerics import (
    ConfigError,
    ConvergenceError,
    DomainError,
    FdConfig,
    InsufficientDataError,
    NewtonConfig,
    SingularMatrixError,
    SpectralGapError,
    fit_order,
)

__all__ = [
    "ExperimentConfig",
    "OutputConfig",
    "ResultRow",
    "RunReport",
    "SystemConfig",
    "TrajectoryConfig",
    "RESULT_COLUMNS",
    "TRAJECTORY_COLUMNS",
    "SCHEMES",
    "format_float",
    "render_csv",
    "render_json",
    "run_compare",
    "run_converge",
    "run_trajectory",
]

SCHEMES = ("full", "one-step", "ildm", "csp-no-dt")
SOLVER_ERRORS = (ConvergenceError, SingularMatrixError, DomainError,
                 SpectralGapError)

RESULT_COLUMNS = ("system", "scheme", "q", "y", "eps", "z_value",
                  "residual", "reference_value", "abs_error", "error")
TRAJECTORY_COLUMNS = ("system", "scheme", "q", "eps", "t", "y", "z",
                      "dist", "error")


# ---------------------------------------------------------------------------
# configuration


def _reject_unknown(mapping: Mapping[str, Any], cls, context: str) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}; "
                          f"expected a subset of {sorted(known)}")


@dataclass(frozen=True)
class SystemConfig:
    """Which benchmark to run and its parameters."""

    kind: str = "mmh"
    kappa: float = 2.0
    lam: float = 1.0

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "SystemConfig":
        _reject_unknown(mapping, cls, "system")
        return cls(**mapping)

    def build(self) -> FastSlowSystem:
        if self.kind == "mmh":
            return builtin_system("mmh", kappa=self.kappa, lam=self.lam)
        return builtin_system(self.kind)


@dataclass(frozen=True)
class OutputConfig:
    path: Optional[str] = None
    format: str = "csv"

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "OutputConfig":
        _reject_unknown(mapping, cls, "output")
        return cls(**mapping)

    def __post_init__(self):
        if self.format not in ("csv", "json"):
            raise ConfigError(
                f"output.format must be csv or json, got {self.format!r}")


@dataclass(frozen=True)
class TrajectoryConfig:
    y0: float = 1.0
    z0: float = 1.0
    eps: float = 1e-2
    t_end: float = 5.0
    num_points: int = 201
    q: int = 1
    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 200_000

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "TrajectoryConfig":
        _reject_unknown(mapping, cls, "trajectory")
        return cls(**mapping)

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ConfigError(f"trajectory.eps must be positive, got {self.eps}")
        if self.t_end < 0.0:
            raise ConfigError(f"trajectory.t_end must be >= 0, got {self.t_end}")
        if self.num_points < 1:
            raise ConfigError(
                f"trajectory.num_points must be >= 1, got {self.num_points}")
        if not 0 <= self.q <= 3:
            raise ConfigError(f"trajectory.q must be in 0..3, got {self.q}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of a run; every driver takes exactly one."""

    system: SystemConfig = field(default_factory=SystemConfig)
    scheme: str = "one-step"
    q_max: int = 2
    s_grid: Sequence[float] = (0.5, 1.0, 2.0)
    eps_grid: Sequence[float] = (1e-2, 10.0 ** -2.5, 1e-3, 10.0 ** -3.5)
    ref_order: int = 2
    band: float = 0.3
    newton: Mapping[str, Any] = field(default_factory=dict)
    fd: Mapping[str, Any] = field(default_factory=dict)
    output: OutputConfig = field(default_factory=OutputConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    seed: int = 0

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "ExperimentConfig":
        _reject_unknown(mapping, cls, "config")
        kwargs = dict(mapping)
        if "system" in kwargs:
            kwargs["system"] = SystemConfig.from_mapping(kwargs["system"])
        if "output" in kwargs:
            kwargs["output"] = OutputConfig.from_mapping(kwargs["output"])
        if "trajectory" in kwargs:
            kwargs["trajectory"] = TrajectoryConfig.from_mapping(
                kwargs["trajectory"])
        if "s_grid" in kwargs:
            kwargs["s_grid"] = tuple(float(v) for v in kwargs["s_grid"])
        if "eps_grid" in kwargs:
            kwargs["eps_grid"] = tuple(float(v) for v in kwargs["eps_grid"])
        return cls(**kwargs)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(
                f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0 <= self.q_max <= 3:
            raise ConfigError(f"q_max must be in 0..3, got {self.q_max}")
        if not self.s_grid:
            raise ConfigError("s_grid must not be empty")
        eps = tuple(self.eps_grid)
        if not eps:
            raise ConfigError("eps_grid must not be empty")
        if any(e <= 0.0 for e in eps):
            raise ConfigError(f"eps_grid must be positive, got {eps}")
        if any(e >= 0.5 for e in eps):
            raise ConfigError(
                f"eps_grid values must be below 0.5 to stay in the "
                f"perturbative regime, got {eps}")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(
                f"eps_grid must be strictly decreasing, got {eps}")
        if not 0 <= self.ref_order <= 2:
            raise ConfigError(f"ref_order must be in 0..2, got {self.ref_order}")
        if self.band <= 0.0:
            raise ConfigError(f"band must be positive, got {self.band}")

    def to_mapping(self) -> dict:
        out = asdict(self)
        out["s_grid"] = list(self.s_grid)
        out["eps_grid"] = list(self.eps_grid)
        out["newton"] = dict(self.newton)
        out["fd"] = dict(self.fd)
        return out

    def newton_config(self) -> NewtonConfig:
        _reject_unknown(self.newton, NewtonConfig, "newton")
        return NewtonConfig(**self.newton)

    def fd_config(self) -> FdConfig:
        _reject_unknown(self.fd, FdConfig, "fd")
        return FdConfig(**self.fd)


# ---------------------------------------------------------------------------
# result rows


@dataclass(frozen=True)
class ResultRow:
    system: str
    scheme: str
    q: int
    y: float
    eps: float
    z_value: float
    residual: float
    reference_value: float
    abs_error: float
    error: str = ""

    def as_mapping(self) -> dict:
        return {c: getattr(self, c) for c in RESULT_COLUMNS}


@dataclass(frozen=True)
class Assertion:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class RunReport:
    kind: str
    config: ExperimentConfig
    columns: tuple
    rows: list
    fits: list
    assertions: list

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)


def _expected_slope(scheme: str, q: int, ref_order: int) -> tuple[float, bool]:
    """Return (slope, two_sided) for an error fit against the reference.

    The reference series is truncated at ref_order, so no method can show
    better than ref_order + 1 against it. Methods that converge to a
    non-invariant object plateau at second order regardless of q.
    """
    if scheme in ("full", "one-step"):
        return float(min(q + 1, ref_order + 1)), False
    if scheme == "csp-no-dt":
        return float(min(q + 1, 2, ref_order + 1)), q + 1 >= 2
    if scheme == "ildm":
        return float(min(2, ref_order + 1)), True
    raise ConfigError(f"unknown scheme {scheme!r}")


def _reference(sys: FastSlowSystem, y: np.ndarray, eps: float,
               ref_order: int, fd: FdConfig) -> float:
    coeffs = (sys.manifold_coeffs(y) if sys.manifold_coeffs is not None
              else expansion_coeffs(sys, y, fd))
    return float(series_eval(coeffs, eps, order=ref_order)[0])


def _solve_point(sys, scheme, chain, q, y, eps, newton, fd):
    """One (scheme, q, y, eps) solve; returns (z, residual, error_message)."""
    try:
        if scheme == "ildm":
            res = ildm_solve(sys, y, eps, newton=newton, fd=fd)
            return float(res.z[0]), float(res.residual), ""
        res = chain.cspm_solve(q, y, eps)
        return float(res.z[0]), float(res.residual), ""
    except SOLVER_ERRORS as exc:
        return math.nan, math.nan, f"{type(exc).__name__}: {exc}"


def _collect_rows(config: ExperimentConfig, sys: FastSlowSystem,
                  schemes: Sequence[str], q_values: Sequence[int]):
    newton = config.newton_config()
    fd = config.fd_config()
    chains = {
        s: CspChain(sys, s, q_max=max(q_values), newton=newton, fd=fd)
        for s in schemes if s != "ildm"
    }
    rows = []
    for scheme in schemes:
        for q in q_values:
            if scheme == "ildm" and q != q_values[0]:
                continue  # the subspace method has no refinement level
            for s in config.s_grid:
                y = np.array([float(s)])
                for eps in config.eps_grid:
                    z, residual, err = _solve_point(
                        sys, scheme, chains.get(scheme), q, y, eps, newton, fd)
                    ref = _reference(sys, y, eps, config.ref_order, fd)
                    abs_err = abs(z - ref) if not math.isnan(z) else math.nan
                    rows.append(ResultRow(
                        system=sys.name, scheme=scheme,
                        q=0 if scheme == "ildm" else q,
                        y=float(s), eps=float(eps), z_value=z,
                        residual=residual, reference_value=ref,
                        abs_error=abs_err, error=err))
    rows.sort(key=lambda r: (r.scheme, r.q, r.y, -r.eps))
    return rows


def _fit_rows(config: ExperimentConfig, rows: Sequence[ResultRow]):
    """Order fits and slope assertions per (scheme, q, y) group."""
    fits, assertions = [], []
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r.scheme, r.q, r.y), []).append(r)
    for (scheme, q, yv), group in sorted(groups.items()):
        name = f"{scheme} q={q} y={yv:g}"
        clean = [r for r in group if not r.error]
        if len(clean) < len(group):
            assertions.append(Assertion(
                name, False, f"{len(group) - len(clean)} point(s) failed to solve"))
            continue
        eps = np.array([r.eps for r in clean])
        err = np.array([r.abs_error for r in clean])
        expected, two_sided = _expected_slope(scheme, q, config.ref_order)
        if np.all(err < 1e-13):
            # reference and method coincide to roundoff; no slope to measure
            fits.append((name, None))
            assertions.append(Assertion(
                name, True,
                f"errors at roundoff (max {err.max():.2e}), "
                f"order >= {expected:g} holds trivially"))
            continue
        try:
            fit = fit_order(eps, err)
        except (InsufficientDataError, DomainError) as exc:
            assertions.append(Assertion(name, False, f"order fit failed: {exc}"))
            continue
        fits.append((name, fit))
        lo = expected - config.band
        hi = expected + config.band
        if two_sided:
            ok = lo <= fit.slope <= hi
            detail = (f"slope {fit.slope:.3f}, expected within "
                      f"[{lo:g}, {hi:g}]")
        else:
            ok = fit.slope >= lo
            detail = f"slope {fit.slope:.3f}, expected >= {lo:g}"
        assertions.append(Assertion(name, ok, detail))
    return fits, assertions


def run_converge(config: ExperimentConfig) -> RunReport:
    """Manifold error against eps for one scheme at every level up to q_max."""
    sys = config.system.build()
    rows = _collect_rows(config, sys, [config.scheme],
                         list(range(config.q_max + 1)))
    fits, assertions = _fit_rows(config, rows)
    return RunReport(kind="converge", config=config, columns=RESULT_COLUMNS,
                     rows=rows, fits=fits, assertions=assertions)


def run_compare(config: ExperimentConfig) -> RunReport:
    """All four schemes side by side at level q_max."""
    sys = config.system.build()
    rows = _collect_rows(config, sys, list(SCHEMES), [config.q_max])
    fits, assertions = _fit_rows(config, rows)
    return RunReport(kind="compare", config=config, columns=RESULT_COLUMNS,
                     rows=rows, fits=fits, assertions=assertions)


@dataclass(frozen=True)
class TrajectoryRow:
    system: str
    scheme: str
    q: int
    eps: float
    t: float
    y: float
    z: float
    dist: float
    error: str = ""

    def as_mapping(self) -> dict:
        return {c: getattr(self, c) for c in TRAJECTORY_COLUMNS}


def run_trajectory(config: ExperimentConfig) -> RunReport:
    """Integrate the full system and track the distance to the refined
    manifold along the way."""
    sys = config.system.build()
    tc = config.trajectory
    newton = config.newton_config()
    fd = config.fd_config()
    traj = integrate(sys, np.array([tc.y0]), np.array([tc.z0]), tc.eps,
                     tc.t_end, num_points=tc.num_points,
                     rtol=tc.rtol, atol=tc.atol, max_steps=tc.max_steps)
    chain = None
    if config.scheme != "ildm":
        chain = CspChain(sys, config.scheme, q_max=max(tc.q, 1),
                         newton=newton, fd=fd)
    rows = []
    for k in range(traj.t.size):
        y = traj.y[k]
        z = traj.z[k]
        try:
            if config.scheme == "ildm":
                target = ildm_solve(sys, y, tc.eps, newton=newton, fd=fd).z
            else:
                target = chain.psi(tc.q, y, tc.eps)
            dist = float(np.max(np.abs(z - target)))
            err = ""
        except SOLVER_ERRORS as exc:
            dist = math.nan
            err = f"{type(exc).__name__}: {exc}"
        rows.append(TrajectoryRow(
            system=sys.name, scheme=config.scheme, q=tc.q, eps=tc.eps,
            t=float(traj.t[k]), y=float(y[0]), z=float(z[0]),
            dist=dist, error=err))
    dists = np.array([r.dist for r in rows])
    tail = dists[max(0, dists.size - max(1, dists.size // 4)):]
    finite_tail = tail[np.isfinite(tail)]
    attracted = finite_tail.size > 0 and bool(
        np.all(finite_tail < 10.0 * tc.eps ** min(tc.q + 1, 3)))
    detail = ("trajectory settles onto the refined manifold"
              if attracted else
              "trajectory does not settle within the expected band")
    assertions = [Assertion("attraction", attracted, detail)]
    if tc.t_end == 0.0:
        # a single sample says nothing about attraction
        assertions = [Assertion("attraction", True,
                                "single sample at t=0, nothing to settle")]
    return RunReport(kind="trajectory", config=config,
                     columns=TRAJECTORY_COLUMNS, rows=rows,
                     fits=[], assertions=assertions)


# ---------------------------------------------------------------------------
# serialization


def format_float(value: float) -> str:
    """Fixed 17 significant digit rendering; round-trips every double."""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".17g")
    return str(value)


def render_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow([format_float(v) for v in row.as_mapping().values()])
    return buf.getvalue()


def _json_safe(value):
    if isinstance(value, float):
        return None if math.isnan(value) else float(format_float(value))
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def render_json(report: RunReport) -> str:
    fits = []
    for name, fit in report.fits:
        if fit is None:
            fits.append({"name": name, "slope": None})
        else:
            fits.append({
                "name": name,
                "slope": fit.slope,
                "intercept": fit.intercept,
                "n_excluded": fit.n_excluded,
            })
    doc = {
        "schema_version": 1,
        "kind": report.kind,
        "config": report.config.to_mapping(),
        "columns": list(report.columns),
        "rows": [row.as_mapping() for row in report.rows],
        "fits": fits,
        "assertions": [
            {"name": a.name, "passed": a.passed, "detail": a.detail}
            for a in report.assertions
        ],
    }
    return json.dumps(_json_safe(doc), indent=2, sort_keys=False) + "\n"


def render_report(report: RunReport) -> str:
    if report.config.output.format == "json":
        return render_json(report)
    return render_csv(report)
