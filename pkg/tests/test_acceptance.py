"""Acceptance battery.

One test per advertised guarantee, each printing a single PASS/FAIL line
with the measured numbers (run with -s to see the lines for passing tests).
The whole module is expected to finish in well under a minute.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from cspkit.csp import CspChain, lambda_assemble, transition_matrix
from cspkit.experiments import (
    ExperimentConfig,
    render_csv,
    render_json,
    run_compare,
    run_converge,
)
from cspkit.fastslow import expansion_h1, expansion_h2, mmh_system
from cspkit.numerics import EPS, fit_order, series_coefficient
from cspkit.selftest import run_selftest

S_GRID = (0.5, 1.0, 2.0)
EPS_GRID = (1e-2, 10.0 ** -2.5, 1e-3, 10.0 ** -3.5)
KAPPA, LAM = 2.0, 1.0


def _report(ok: bool, text: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {text}")
    assert ok, text


def _slopes_by_q(report):
    out = {}
    for name, fit in report.fits:
        q = int(name.split("q=")[1].split()[0])
        out.setdefault(q, []).append(fit.slope if fit is not None else np.inf)
    return {q: min(v) for q, v in sorted(out.items())}


@pytest.fixture(scope="module")
def sys_mmh():
    return mmh_system()


@pytest.fixture(scope="module")
def chains(sys_mmh):
    return {
        "full": CspChain(sys_mmh, "full", q_max=2),
        "one-step": CspChain(sys_mmh, "one-step", q_max=2),
    }


@pytest.fixture(scope="module")
def conv_reports():
    def conv(scheme):
        return run_converge(ExperimentConfig.from_mapping(
            {"scheme": scheme, "q_max": 2,
             "s_grid": list(S_GRID), "eps_grid": list(EPS_GRID)}))

    return {s: conv(s) for s in ("one-step", "full", "csp-no-dt", "ildm")}


def test_criterion_01_one_step_gains_one_order_per_level(conv_reports):
    slopes = _slopes_by_q(conv_reports["one-step"])
    ok = all(slopes[q] >= q + 1 - 0.3 for q in (0, 1, 2))
    _report(ok, "one-step refinement error orders: min slopes "
                f"{slopes[0]:.2f}/{slopes[1]:.2f}/{slopes[2]:.2f} "
                "against bounds 0.7/1.7/2.7 for levels 0/1/2")


def test_criterion_02_full_scheme_matches_and_agrees_at_level_1(
        conv_reports, chains):
    slopes = _slopes_by_q(conv_reports["full"])
    order_ok = all(slopes[q] >= q + 1 - 0.3 for q in (0, 1, 2))
    worst = 0.0
    for s in S_GRID:
        for eps in EPS_GRID:
            a = chains["full"].psi(1, [s], eps)[0]
            b = chains["one-step"].psi(1, [s], eps)[0]
            worst = max(worst, abs(a - b))
    ok = order_ok and worst <= 1e-10
    _report(ok, "full-update scheme: min slopes "
                f"{slopes[0]:.2f}/{slopes[1]:.2f}/{slopes[2]:.2f}, "
                f"level-1 manifolds of both schemes agree to {worst:.2e} "
                "(tolerance 1e-10)")


def test_criterion_03_level_1_second_order_coefficient(chains):
    target = -8.0 / 2187.0
    c2 = series_coefficient(
        lambda e: chains["one-step"].psi(1, [1.0], e)[0], order=2)
    rel = abs(c2 - target) / abs(target)
    _report(rel <= 1e-3,
            f"extrapolated eps^2 coefficient of the level-1 manifold at "
            f"s=1: {c2:.8e} against -8/2187, relative error {rel:.2e} "
            "(tolerance 1e-3)")


def test_criterion_04_expansion_coefficients_match_closed_forms(sys_mmh):
    worst1 = worst2 = 0.0
    for s in S_GRID:
        y = np.array([s])
        coeffs = sys_mmh.manifold_coeffs(y)
        worst1 = max(worst1, abs(expansion_h1(sys_mmh, y)[0] - coeffs.h1[0])
                     / abs(coeffs.h1[0]))
        worst2 = max(worst2, abs(expansion_h2(sys_mmh, y)[0] - coeffs.h2[0])
                     / abs(coeffs.h2[0]))
    ok = worst1 <= 1e-6 and worst2 <= 1e-4
    _report(ok, "generic expansion solver against closed forms: "
                f"first coefficient rel error {worst1:.2e} (tol 1e-6), "
                f"second {worst2:.2e} (tol 1e-4)")


def test_criterion_05_level_1_operator_on_manifold(sys_mmh, chains):
    eps = 1e-3
    worst = 0.0
    for s in S_GRID:
        y = np.array([s])
        z = chains["one-step"].psi(1, y, eps)
        got = lambda_assemble(sys_mmh, chains["one-step"].basis(1),
                              y, z, eps).matrix
        c = z[0]
        p = s + KAPPA
        g1v = -s + (s + KAPPA - LAM) * c
        want = np.array([
            [-p + eps * (s + KAPPA - LAM) * (c - 1.0) / p,
             s / p - c + eps * (c - 1.0)
             * (LAM * (c - 1.0) - g1v) / p ** 2],
            [eps * (s + KAPPA - LAM), eps * LAM * (c - 1.0) / p],
        ])
        worst = max(worst, float(np.max(np.abs(got - want))))
    _report(worst <= 1e-5,
            f"level-1 operator on the refined manifold at eps=1e-3 matches "
            f"its closed form to {worst:.2e} (tolerance 1e-5)")


def test_criterion_06_transition_matrices(chains):
    eps = 1e-3
    t1 = transition_matrix(chains["full"], chains["one-step"], 1, [1.0], eps)
    want = np.array([[1.0, 0.0],
                     [eps * (1.0 + KAPPA - LAM) / (1.0 + KAPPA), 1.0]])
    d1 = float(np.max(np.abs(t1.matrix - want)))

    t12 = np.array([[abs(float(transition_matrix(
        chains["full"], chains["one-step"], 2, [s], e).fs[0, 0]))
        for e in EPS_GRID] for s in S_GRID])
    floor = 100.0 * EPS
    if np.all(t12 < floor):
        # the level-2 mismatch entry is exactly zero on this benchmark, so
        # every sample sits at roundoff and the third-order bound holds with
        # a zero leading coefficient
        ok = d1 <= 1e-7
        _report(ok, f"basis transition: level-1 matrix matches to {d1:.2e} "
                    "(tolerance 1e-7); level-2 fast-slow entry at roundoff "
                    f"(max {t12.max():.2e} < {floor:.2e}), third-order bound "
                    "holds trivially")
    else:
        slopes = [fit_order(np.array(EPS_GRID), row).slope for row in t12]
        ok = d1 <= 1e-7 and all(sl >= 2.7 for sl in slopes)
        _report(ok, f"basis transition: level-1 matrix matches to {d1:.2e} "
                    f"(tolerance 1e-7); level-2 fast-slow entry slopes "
                    f"{['%.2f' % sl for sl in slopes]} against 2.7")


def test_criterion_07_subspace_method_plateaus_at_second_order(conv_reports):
    rep = conv_reports["ildm"]
    slopes = [fit for _, fit in rep.fits]
    in_band = all(1.7 <= f.slope <= 2.3 for f in slopes)
    normalized = [r.abs_error / r.eps ** 2
                  for r in rep.rows if r.y == 1.0 and not r.error]
    detectable = all(v > 1e-4 for v in normalized)
    ok = in_band and detectable
    _report(ok, "spectral-subspace manifold: slopes "
                f"{['%.2f' % f.slope for f in slopes]} within [1.7, 2.3]; "
                f"eps^2-normalized error at s=1 in "
                f"[{min(normalized):.2e}, {max(normalized):.2e}], all above "
                "1e-4")


def test_criterion_08_transport_term_is_load_bearing(conv_reports):
    deg = _slopes_by_q(conv_reports["csp-no-dt"])
    true_min = min(_slopes_by_q(conv_reports["one-step"])[2],
                   _slopes_by_q(conv_reports["full"])[2])
    deg2_fits = [fit.slope for name, fit in conv_reports["csp-no-dt"].fits
                 if "q=2" in name]
    ok = all(1.7 <= sl <= 2.3 for sl in deg2_fits) and true_min >= 2.7
    _report(ok, "dropping the basis transport term: level-2 slopes plateau "
                f"at {deg[2]:.2f} within [1.7, 2.3] while the true schemes "
                f"reach {true_min:.2f} (at least 2.7)")


def test_criterion_09_structural_selftest():
    report = run_selftest()
    n_pass = sum(c.passed for c in report.checks)
    _report(report.passed,
            f"structural identity battery: {n_pass}/{len(report.checks)} "
            "checks passed")


def test_criterion_10_byte_identical_reruns():
    cfg = ExperimentConfig.from_mapping(
        {"scheme": "one-step", "q_max": 2,
         "s_grid": list(S_GRID), "eps_grid": list(EPS_GRID)})
    csv_same = render_csv(run_converge(cfg)) == render_csv(run_converge(cfg))
    cmp_cfg = ExperimentConfig.from_mapping(
        {"q_max": 2, "s_grid": [1.0], "output": {"format": "json"}})
    json_same = (render_json(run_compare(cmp_cfg))
                 == render_json(run_compare(cmp_cfg)))
    ok = csv_same and json_same
    _report(ok, "deterministic output: repeated runs render byte-identical "
                f"csv ({csv_same}) and json ({json_same})")
