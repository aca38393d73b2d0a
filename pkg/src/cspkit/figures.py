"""Figure rendering for experiment reports.

Tables are the canonical output; these plots are a convenience layer on the
same rows. Files land next to the delimited output with deterministic names
derived from its stem.
"""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .experiments import RunReport

__all__ = ["render_figures"]

_COLORS = {"full": "tab:blue", "one-step": "tab:orange",
           "ildm": "tab:green", "csp-no-dt": "tab:red"}


def _finite_series(rows):
    eps = [r.eps for r in rows if not r.error and r.abs_error > 0.0
           and math.isfinite(r.abs_error)]
    err = [r.abs_error for r in rows if not r.error and r.abs_error > 0.0
           and math.isfinite(r.abs_error)]
    return eps, err


def _render_converge(report: RunReport, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    groups: dict[tuple, list] = {}
    for r in report.rows:
        groups.setdefault((r.q, r.y), []).append(r)
    for (q, yv), rows in sorted(groups.items()):
        eps, err = _finite_series(rows)
        if not eps:
            continue
        ax.loglog(eps, err, "o-", ms=4,
                  label=f"q={q}, y={yv:g}")
    # slope guides anchored at the largest eps
    all_eps = [r.eps for r in report.rows]
    if all_eps:
        e0, e1 = max(all_eps), min(all_eps)
        for p in range(1, min(report.config.q_max, 2) + 2):
            c = 10.0 ** (-p)
            ax.loglog([e0, e1], [c * e0 ** p, c * e1 ** p],
                      "k--", lw=0.7, alpha=0.5)
            ax.annotate(f"slope {p}", (e1, c * e1 ** p), fontsize=7,
                        textcoords="offset points", xytext=(4, 0))
    ax.set_xlabel("eps")
    ax.set_ylabel("manifold error")
    ax.set_title(f"{report.config.scheme}: error against the reference series")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _render_compare(report: RunReport, path: Path) -> None:
    ys = sorted({r.y for r in report.rows})
    fig, axes = plt.subplots(1, len(ys), figsize=(4.0 * len(ys), 4.0),
                             squeeze=False, sharey=True)
    for ax, yv in zip(axes[0], ys):
        for scheme in _COLORS:
            rows = [r for r in report.rows if r.y == yv and r.scheme == scheme]
            eps, err = _finite_series(rows)
            if not eps:
                continue
            ax.loglog(eps, err, "o-", ms=4, color=_COLORS[scheme], label=scheme)
        ax.set_xlabel("eps")
        ax.set_title(f"y = {yv:g}")
        ax.grid(True, which="both", alpha=0.3)
    axes[0][0].set_ylabel("manifold error")
    axes[0][0].legend(fontsize=7)
    fig.suptitle(f"method comparison at q = {report.config.q_max}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _render_trajectory(report: RunReport, path: Path) -> None:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.0, 6.0), sharex=True)
    t = [r.t for r in report.rows]
    ax1.plot(t, [r.y for r in report.rows], label="slow state")
    ax1.plot(t, [r.z for r in report.rows], label="fast state")
    ax1.set_ylabel("state")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    finite = [(r.t, r.dist) for r in report.rows
              if not r.error and r.dist > 0.0 and math.isfinite(r.dist)]
    if finite:
        ax2.semilogy([p[0] for p in finite], [p[1] for p in finite])
    ax2.set_xlabel("t (fast time)")
    ax2.set_ylabel("distance to refined manifold")
    ax2.grid(alpha=0.3, which="both")
    tc = report.config.trajectory
    fig.suptitle(f"{report.config.scheme} q={tc.q}, eps={tc.eps:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_figures(report: RunReport, output_path: str) -> list[str]:
    """Render the figures for a report next to its table file.

    Returns the list of files written. The name is always
    <table stem>_<kind>.png so reruns overwrite rather than accumulate.
    """
    base = Path(output_path)
    path = base.with_name(f"{base.stem}_{report.kind}.png")
    if report.kind == "converge":
        _render_converge(report, path)
    elif report.kind == "compare":
        _render_compare(report, path)
    elif report.kind == "trajectory":
        _render_trajectory(report, path)
    else:
        return []
    return [str(path)]
