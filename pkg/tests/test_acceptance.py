"""Acceptance criteria 1-9, one PASS/FAIL line each.

Run under pytest (lines are collected in the terminal summary) or directly
with ``python3 tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
import pytest

from sharpflow.coefficients import compute_constants, parse_config
from sharpflow.curve_flow import (
    measure_decay_rate,
    normal_velocity,
    reparametrize,
    run,
    shape_points,
    step,
)
from sharpflow.mode_solver import convergence_study, solve_mode
from sharpflow.oracle import ClosedFormCase, zeta_affine, zeta_epsilon, zeta_reference
from sharpflow.symbols import (
    DOMINATED_LAWS,
    ISD_CONFIG,
    fit_exponent,
    make_law,
    remainder_decay,
    tabulate,
    verify_table,
)

RESULTS = []

UNIT_MOBILITY = {"m_tilde": {"type": "poly", "coeffs": [1.0]}, "i": 1,
                 "n": {"type": "affine", "beta0": 1.0, "beta1": 1.0},
                 "a2tau": {"type": "tied", "a_tilde": 1.0}}
QUADRATIC = {"m_tilde": {"type": "poly", "coeffs": [1.0]}, "i": 1,
             "n": {"type": "poly", "coeffs": [2.0, 1.0, 0.2]},
             "a2tau": {"type": "tied", "a_tilde": 1.0}}
SHIPPED_LAWS = ("surface_diffusion", "intermediate", "vpmcf", "sqrt_lb", "fractional_closed",
                "fractional_numeric", "epsilon_family(0.01)")
FLOW_LAWS = {"surface_diffusion": 4.0, "intermediate": 10.0, "sqrt_lb": 25.0,
             "fractional_closed": 20.0}


def report(label, passed, detail, seconds):
    line = f"criterion {label}: {'PASS' if passed else 'FAIL'}  {detail}  [{seconds:.2f} s]"
    RESULTS.append(line)
    print(line)
    return passed


# -- 1 ------------------------------------------------------------------------

def check_1():
    t0 = time.perf_counter()
    k = compute_constants(parse_config(UNIT_MOBILITY))
    dt = time.perf_counter() - t0
    e1 = abs(k.sigma_over_delta - math.pi ** 2 / 16)
    e2 = abs(k.sigma - math.pi / 2)
    e3 = abs(k.alpha1 - 2.0 / k.delta)
    ok = e1 <= 1e-10 and e2 <= 1e-12 and e3 <= 1e-10 and dt < 0.1
    return report("1", ok, f"|s/d - pi^2/16|={e1:.1e} |s - pi/2|={e2:.1e} "
                           f"|a(1) - 2/d|={e3:.1e}", dt)


# -- 2 and 3 ------------------------------------------------------------------

_SOLVES = {}


def _criterion_2_solves():
    if not _SOLVES:
        t0 = time.perf_counter()
        coeffs = parse_config(UNIT_MOBILITY)
        case = ClosedFormCase.from_coefficients(coeffs)
        sols = {lam: solve_mode(coeffs, lam, n_cells=2048) for lam in (1.0, 10.0, 100.0, 1e3, 1e4)}
        exact = {lam: zeta_affine(case, lam) for lam in sols}
        study = convergence_study(coeffs, 100.0, [256, 512, 1024, 2048], reference=exact[100.0])
        _SOLVES.update(coeffs=coeffs, sols=sols, exact=exact, study=study,
                       seconds=time.perf_counter() - t0)
    return _SOLVES


def check_2():
    d = _criterion_2_solves()
    worst = max(abs(s.zeta - d["exact"][lam]) / d["exact"][lam] for lam, s in d["sols"].items())
    order = d["study"].order
    ok = worst <= 1e-6 and order >= 1.8 and d["seconds"] < 5.0
    return report("2", ok, f"max rel error {worst:.2e} at N=2048, order {order:.3f}",
                  d["seconds"])


def check_3():
    d = _criterion_2_solves()
    sigma = compute_constants(d["coeffs"]).sigma
    e_en = max(abs(s.energy - sigma * s.zeta) / (1 + sigma * s.zeta) for s in d["sols"].values())
    e_dual = max(abs(s.zeta - s.zeta_alt) / s.zeta for s in d["sols"].values())
    ok = e_en <= 1e-8 and e_dual <= 1e-6
    return report("3", ok, f"energy {e_en:.1e}, dual zeta {e_dual:.1e}", d["seconds"])


# -- 4 ------------------------------------------------------------------------

def check_4():
    t0 = time.perf_counter()
    affine = make_law("fractional_closed", parse_config(UNIT_MOBILITY))
    k = affine.constants
    gap = abs(affine(1e4) / (k.sigma * k.eta * 100.0) - 1.0)
    quad = make_law("fractional_closed", parse_config(QUADRATIC))
    rd = remainder_decay(quad, quad.constants, np.logspace(2, 6, 17))
    dt = time.perf_counter() - t0
    ok = gap <= 1e-8 and abs(k.eta - 0.1) < 1e-14 and rd.exponent <= -0.25 and dt < 30
    return report("4", ok, f"affine gap {gap:.1e} (eta={k.eta:g}); quadratic decay exponent "
                           f"{rd.exponent:.3f} over the top decade of [1e2, 1e6]", dt)


# -- 5 ------------------------------------------------------------------------

def check_5():
    t0 = time.perf_counter()
    k = compute_constants(parse_config(ISD_CONFIG))
    eps = [1e-1, 1e-2, 1e-3]
    ok = abs(k.delta - 8 / math.pi) < 1e-13 and abs(k.omega - math.pi / 2) < 1e-13
    rates = []
    for lam in (1.0, 4.0, 9.0, 16.0):
        target = zeta_reference("intermediate", k, lam)
        gaps = [abs(zeta_epsilon(e, k.alpha1, lam) - target) for e in eps]
        ok &= all(b < a for a, b in zip(gaps, gaps[1:]))
        rates.append(np.polyfit(np.log(eps), np.log(gaps), 1)[0])
    final = abs(zeta_epsilon(1e-3, k.alpha1, 1.0) - zeta_reference("intermediate", k, 1.0))
    rel = final / zeta_reference("intermediate", k, 1.0)
    dt = time.perf_counter() - t0
    ok = ok and min(rates) >= 0.9 and rel < 1e-3 and dt < 1.0
    return report("5", ok, f"rates {', '.join(f'{r:.3f}' for r in rates)}; "
                           f"gap at eps=1e-3, lam=1: {rel:.1e} relative", dt)


# -- 6 ------------------------------------------------------------------------

_TABLES = {}


def _tables():
    if not _TABLES:
        t0 = time.perf_counter()
        for law_id in SHIPPED_LAWS:
            law = make_law(law_id)
            _TABLES[law_id] = (law, tabulate(law, 1e-3, 1e8, 61))
        _TABLES["_seconds"] = time.perf_counter() - t0
    return _TABLES


def check_6a():
    """Positivity and zeta(0) = 0 for all laws; dominance for coefficient symbols."""
    tabs = _tables()
    bad = []
    for law_id in SHIPPED_LAWS:
        law, table = tabs[law_id]
        rep = verify_table(table, law.constants, law)
        if not (rep.positivity and rep.zero_mode and rep.failed_rows == 0):
            bad.append(f"{law_id}: positivity/zero mode")
        if law.id in DOMINATED_LAWS and not rep.dominance:
            bad.append(f"{law_id}: dominance margin {rep.min_margin:.2e}")
    ok = not bad and tabs["_seconds"] < 60
    return report("6a", ok, "zeta > 0, zeta(0) = 0 for all 7 laws; zeta <= (sigma/delta) lam "
                            "for the 5 coefficient symbols" if ok else "; ".join(bad),
                  tabs["_seconds"])


def check_6b():
    tabs = _tables()
    t0 = time.perf_counter()
    sd = fit_exponent(tabs["surface_diffusion"][1], (1e-3, 1e8)).slope
    frac = fit_exponent(tabs["fractional_closed"][1], (1e6, 1e8)).slope
    num = fit_exponent(tabs["fractional_numeric"][1], (1e6, 1e8)).slope
    isd = fit_exponent(tabs["intermediate"][1], (1e6, 1e8)).slope
    ok = abs(sd - 1) <= 1e-12 and abs(frac - 0.5) <= 1e-3 and abs(num - 0.5) <= 1e-3 \
        and isd <= 0.05
    return report("6b", ok, f"slopes SD {sd:.15f}, fractional tail {frac:.5f} "
                            f"(numeric {num:.5f}), ISD tail {isd:.2e}",
                  time.perf_counter() - t0)


def check_6c():
    """The limiting laws sqrt_lb and vpmcf are not dominated at small lam."""
    tabs = _tables()
    details, dominated = [], True
    for law_id in ("sqrt_lb", "vpmcf"):
        law, table = tabs[law_id]
        rep = verify_table(table, law.constants, law)
        dominated &= rep.dominance
        details.append(f"{law_id} margin {rep.min_margin:.3g} at lam={rep.worst_lambda:g}")
    return report("6c", dominated, "dominance for limiting laws: " + "; ".join(details)
                  + " (expected failure)", 0.0)


# -- 7 ------------------------------------------------------------------------

def check_7(law_id):
    t0 = time.perf_counter()
    law = make_law(law_id)
    start = reparametrize(shape_points("ellipse:1.5,1.0"), 256)
    free = run(start, law, FLOW_LAWS[law_id], 20).report()
    fixed = run(start, law, FLOW_LAWS[law_id], 20, enforce_area=True).report()
    dt = time.perf_counter() - t0
    ok = (free["area_drift"] <= 1e-6 and fixed["area_drift"] <= 1e-10
          and free["perimeter_violations"] == 0 and fixed["perimeter_violations"] == 0
          and free["deficit_strictly_decreasing"] and fixed["deficit_strictly_decreasing"]
          and free["terminal_kappa_dev"] <= 1e-3 and dt < 120)
    return report(f"7 ({law_id})", ok,
                  f"drift {free['area_drift']:.1e} / {fixed['area_drift']:.1e} restored, "
                  f"violations {free['perimeter_violations']}, deficit "
                  f"{free['deficit_initial']:.3f} -> {free['deficit_final']:.1e}, "
                  f"terminal kappa dev {free['terminal_kappa_dev']:.1e}", dt)


# -- 8 ------------------------------------------------------------------------

def check_8():
    t0 = time.perf_counter()
    sd_oracle = 3 * math.pi ** 2 / 4
    parts, ok = [], True
    for law_id in SHIPPED_LAWS:
        rate, predicted = measure_decay_rate(make_law(law_id))
        if law_id == "surface_diffusion":
            ok &= abs(predicted - sd_oracle) < 1e-12
        err = abs(rate / predicted - 1)
        ok &= err <= 0.05
        parts.append(f"{law_id.split('(')[0]} {rate:.4f}/{predicted:.4f}")
    dt = time.perf_counter() - t0
    ok = ok and dt < 60
    return report("8", ok, "measured/predicted mode-2 rate: " + ", ".join(parts), dt)


# -- 9 ------------------------------------------------------------------------

def check_9():
    t0 = time.perf_counter()
    circle = reparametrize(shape_points("circle:1.0"), 128)
    worst, ok = 0.0, True
    for law_id in SHIPPED_LAWS:
        law = make_law(law_id)
        tol = 1e-12 * law.constants.sigma / circle.L
        s = circle
        v0 = np.abs(normal_velocity(s, law)).max()
        for _ in range(100):
            s = step(s, law)
        v1 = np.abs(normal_velocity(s, law)).max()
        ok &= v0 <= tol and v1 <= tol
        worst = max(worst, v0 / tol, v1 / tol)
    return report("9", ok, f"max|V| / (1e-12 sigma/L) = {worst:.2e} over all laws, "
                           "at step 0 and after 100 steps", time.perf_counter() - t0)


# -- pytest entry points ------------------------------------------------------

def test_criterion_1_constants():
    assert check_1()


def test_criterion_2_oracle_agreement():
    assert check_2()


def test_criterion_3_energy_identity():
    assert check_3()


def test_criterion_4_fractional_asymptotics():
    assert check_4()


def test_criterion_5_isd_limit():
    assert check_5()


def test_criterion_6a_symbol_positivity_and_dominance():
    assert check_6a()


def test_criterion_6b_symbol_slopes():
    assert check_6b()


@pytest.mark.xfail(strict=True, reason="sqrt_lb and vpmcf exceed (sigma/delta) lam for small lam")
def test_criterion_6c_limiting_laws_dominance():
    assert check_6c()


@pytest.mark.parametrize("law_id", list(FLOW_LAWS))
def test_criterion_7_flow_invariants(law_id):
    assert check_7(law_id)


def test_criterion_8_linear_stability():
    assert check_8()


def test_criterion_9_equilibria():
    assert check_9()


if __name__ == "__main__":
    checks = [check_1, check_2, check_3, check_4, check_5, check_6a, check_6b, check_6c]
    checks += [lambda law=law: check_7(law) for law in FLOW_LAWS] + [check_8, check_9]
    for check in checks:
        check()
