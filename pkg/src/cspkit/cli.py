"""Command line interface.

Four subcommands: converge (order study for one scheme), compare (all
schemes side by side), trajectory (integrate and track the distance to the
refined manifold), selftest (structural identity battery). Configuration
comes from an optional YAML file with flags overriding individual fields;
every run is deterministic, so identical invocations produce byte-identical
outputs.

Exit codes: 0 all assertions passed, 1 an assertion failed, 2 configuration
problem, 3 a solver failed outright.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .experiments import (
    ExperimentConfig,
    render_report,
    run_compare,
    run_converge,
    run_trajectory,
)
from .numerics import (
    ConfigError,
    ConvergenceError,
    DomainError,
    SingularMatrixError,
    SpectralGapError,
    StiffnessError,
)
from .selftest import run_selftest

__all__ = ["main"]

SOLVER_EXIT_ERRORS = (ConvergenceError, SingularMatrixError, DomainError,
                      SpectralGapError, StiffnessError)


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated floats: {exc}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", metavar="YAML",
                        help="configuration file; flags override its fields")
    parser.add_argument("--system", choices=("mmh", "linear", "quad"))
    parser.add_argument("--kappa", type=float, help="mmh rate parameter")
    parser.add_argument("--lam", type=float, help="mmh rate parameter")
    parser.add_argument("--scheme",
                        choices=("full", "one-step", "ildm", "csp-no-dt"))
    parser.add_argument("--q-max", type=int, dest="q_max")
    parser.add_argument("--s-grid", type=_float_list, dest="s_grid",
                        metavar="S1,S2,...")
    parser.add_argument("--eps-grid", type=_float_list, dest="eps_grid",
                        metavar="E1,E2,...")
    parser.add_argument("--ref-order", type=int, dest="ref_order")
    parser.add_argument("--band", type=float)
    parser.add_argument("--output", metavar="PATH",
                        help="table file; figures land next to it")
    parser.add_argument("--format", choices=("csv", "json"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--no-figures", action="store_true",
                        help="skip figure rendering")


def _add_trajectory_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--y0", type=float)
    parser.add_argument("--z0", type=float)
    parser.add_argument("--eps", type=float)
    parser.add_argument("--t-end", type=float, dest="t_end")
    parser.add_argument("--num-points", type=int, dest="num_points")
    parser.add_argument("--traj-q", type=int, dest="traj_q",
                        help="refinement level tracked along the trajectory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cspkit",
        description="slow-manifold refinement toolkit for fast-slow systems")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("converge",
                       help="manifold error against eps, one scheme, all levels")
    _add_common(p)
    p = sub.add_parser("compare", help="all schemes side by side at one level")
    _add_common(p)
    p = sub.add_parser("trajectory",
                       help="integrate and track distance to the manifold")
    _add_common(p)
    _add_trajectory_flags(p)
    p = sub.add_parser("selftest", help="run the structural identity battery")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_mapping(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _apply_overrides(mapping: dict, args: argparse.Namespace) -> dict:
    out = dict(mapping)

    def nested(key: str) -> dict:
        out[key] = dict(out.get(key, {}))
        return out[key]

    if args.system is not None:
        nested("system")["kind"] = args.system
    if args.kappa is not None:
        nested("system")["kappa"] = args.kappa
    if args.lam is not None:
        nested("system")["lam"] = args.lam
    for name in ("scheme", "q_max", "s_grid", "eps_grid", "ref_order",
                 "band", "seed"):
        value = getattr(args, name)
        if value is not None:
            out[name] = value
    if args.output is not None:
        nested("output")["path"] = args.output
    if args.format is not None:
        nested("output")["format"] = args.format
    if getattr(args, "y0", None) is not None:
        nested("trajectory")["y0"] = args.y0
    if getattr(args, "z0", None) is not None:
        nested("trajectory")["z0"] = args.z0
    if getattr(args, "eps", None) is not None:
        nested("trajectory")["eps"] = args.eps
    if getattr(args, "t_end", None) is not None:
        nested("trajectory")["t_end"] = args.t_end
    if getattr(args, "num_points", None) is not None:
        nested("trajectory")["num_points"] = args.num_points
    if getattr(args, "traj_q", None) is not None:
        nested("trajectory")["q"] = args.traj_q
    return out


def _emit(report, args, stdout) -> None:
    text = render_report(report)
    path = report.config.output.path
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
        print(f"wrote {path}", file=stdout)
        if not args.no_figures:
            from .figures import render_figures

            for fig_path in render_figures(report, path):
                print(f"wrote {fig_path}", file=stdout)
    else:
        stdout.write(text)
    for a in report.assertions:
        status = "pass" if a.passed else "FAIL"
        print(f"[{status}] {a.name}: {a.detail}", file=stdout)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    stdout = sys.stdout

    if args.command == "selftest":
        report = run_selftest(seed=args.seed)
        for line in report.lines():
            print(line, file=stdout)
        return 0 if report.passed else 1

    runners = {"converge": run_converge, "compare": run_compare,
               "trajectory": run_trajectory}
    try:
        mapping = _apply_overrides(_load_mapping(args.config), args)
        config = ExperimentConfig.from_mapping(mapping)
    except (ConfigError, FileNotFoundError, TypeError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        report = runners[args.command](config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SOLVER_EXIT_ERRORS as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    _emit(report, args, stdout)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
