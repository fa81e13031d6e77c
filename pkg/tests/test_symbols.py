import math
import threading

import numpy as np
import pytest

from sharpflow.coefficients import compute_constants
from sharpflow.oracle import ClosedFormCase, zeta_affine
from sharpflow.symbols import (
    DOMINATED_LAWS,
    LAW_IDS,
    SymbolCache,
    fit_exponent,
    log_grid,
    make_law,
    parse_law_id,
    remainder_decay,
    tabulate,
    verify_table,
)


def test_log_grid_endpoints():
    g = log_grid(1e-3, 1e8, 61)
    assert g[0] == 1e-3 and g[-1] == 1e8 and g.size == 61
    assert np.all(np.diff(g) > 0)


def test_parse_law_ids():
    assert parse_law_id("epsilon_family(0.01)") == ("epsilon_family", 0.01)
    assert parse_law_id("epsilon_family:0.1") == ("epsilon_family", 0.1)
    assert parse_law_id("sqrt_lb") == ("sqrt_lb", None)
    with pytest.raises(ValueError):
        parse_law_id("heat")


@pytest.mark.parametrize("law_id", [x for x in LAW_IDS if x != "fractional_numeric"])
def test_zero_mode_and_positivity(law_id):
    law = make_law("epsilon_family(0.05)" if law_id == "epsilon_family" else law_id)
    assert law(0.0) == 0.0
    z = law(np.logspace(-3, 8, 23))
    assert np.all(z > 0) and np.all(np.isfinite(z))


def test_evaluation_is_deterministic():
    law = make_law("fractional_closed")
    lam = np.logspace(-3, 8, 61)
    assert np.array_equal(law(lam), law(lam))


def test_surface_diffusion_slope_is_one():
    t = tabulate(make_law("surface_diffusion"), 1e-3, 1e8, 61)
    assert abs(fit_exponent(t, (1e-3, 1e8)).slope - 1.0) <= 1e-12


def test_fractional_tail_slope_is_half():
    t = tabulate(make_law("fractional_closed"), 1e-3, 1e8, 61)
    assert abs(fit_exponent(t, (1e6, 1e8)).slope - 0.5) <= 1e-3


def test_isd_tail_is_flat():
    t = tabulate(make_law("intermediate"), 1e-3, 1e8, 61)
    assert fit_exponent(t, (1e6, 1e8)).slope <= 0.05


@pytest.mark.parametrize("law_id", ["surface_diffusion", "intermediate", "fractional_closed",
                                    "epsilon_family(0.01)"])
def test_dominated_laws_pass_verification(law_id):
    law = make_law(law_id)
    t = tabulate(law, 1e-3, 1e8, 61)
    rep = verify_table(t, law.constants, law)
    assert rep.passed, rep.violations[:3]


@pytest.mark.parametrize("law_id", ["sqrt_lb", "vpmcf"])
def test_limiting_laws_exceed_surface_diffusion_at_small_lambda(law_id):
    assert law_id not in DOMINATED_LAWS
    law = make_law(law_id)
    t = tabulate(law, 1e-3, 1e8, 61)
    rep = verify_table(t, law.constants, law)
    assert not rep.dominance and rep.worst_lambda == 1e-3


def test_numeric_law_matches_closed_form():
    law = make_law("fractional_numeric", n_cells=1024)
    case = ClosedFormCase.from_coefficients(law.cache.coeffs)
    lam = np.array([0.1, 10.0, 1e3])
    np.testing.assert_allclose(law(lam), zeta_affine(case, lam), rtol=5e-6)


def test_cache_interpolates_between_close_nodes(affine):
    cache = SymbolCache(affine)
    cache.exact(10.0)
    cache.exact(10.2)
    solves = cache.solves
    mid = cache(10.1)
    assert cache.solves == solves
    # log-log linear interpolation over a gap d is accurate to about d^2 / 8
    # times the curvature of log zeta, here below 1e-5
    assert mid == pytest.approx(cache.exact(10.1), rel=1e-5)
    cache(20.0)
    assert cache.solves == solves + 2


def test_cache_prefill_is_thread_safe(affine):
    cache = SymbolCache(affine, n_cells=128)
    cache.prefill(1.0, 100.0, threads=4)
    keys = list(cache._keys)
    assert keys == sorted(keys) and len(keys) == len(set(keys)) == cache.solves
    errs = []

    def worker():
        try:
            for x in np.linspace(1.0, 100.0, 50):
                cache(x)
        except Exception as exc:  # pragma: no cover
            errs.append(exc)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert not errs


def test_failed_rows_are_marked(quadratic):
    def flaky(lam):
        if np.any(lam > 1e3):
            raise RuntimeError("boom")
        return lam

    from sharpflow.symbols import FlowLaw
    law = FlowLaw("surface_diffusion", flaky, compute_constants(quadratic), "test")
    t = tabulate(law, 1.0, 1e5, 11, threads=1)
    assert t.failed.sum() == 4
    assert np.all(np.isnan(t.zetas[t.failed]))


def test_table_csv_and_interpolation(tmp_path):
    law = make_law("surface_diffusion")
    t = tabulate(law, 1.0, 100.0, 5)
    t.write_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "lambda,zeta,law,config_hash" and len(lines) == 6
    assert t.interpolate(7.0) == pytest.approx(law(7.0), rel=1e-12)
    assert t.interpolate(1e3) == pytest.approx(law(1e3), rel=1e-10)


def test_remainder_decay_affine_and_quadratic(quadratic):
    law = make_law("fractional_closed")
    rd = remainder_decay(law, law.constants, [1e2, 1e3, 1e4])
    assert rd.remainders[-1] <= 1e-8 and rd.fractional
    qlaw = make_law("fractional_closed", quadratic)
    rd = remainder_decay(qlaw, qlaw.constants, np.logspace(2, 6, 9))
    assert rd.exponent <= -0.25 and rd.fractional


def test_remainder_decay_flags_non_fractional():
    law = make_law("intermediate")
    with pytest.raises(ValueError):
        remainder_decay(law, law.constants, [1.0, 10.0])
    sd = make_law("surface_diffusion")
    frac = make_law("fractional_closed")
    rd = remainder_decay(sd, frac.constants, np.logspace(2, 6, 5))
    assert not rd.fractional
