import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sharpflow import _pykernels, kernels


def _system(n, rng):
    k = rng.uniform(0.1, 1e6, n - 1)
    h = rng.uniform(1e-4, 1e-2, n - 1)
    mdiag = np.zeros(n)
    mdiag[:-1] += h / 3
    mdiag[1:] += h / 3
    moff = h / 6
    return k, mdiag, moff


def _dense(k, mdiag, moff):
    n = mdiag.size
    a = np.diag(mdiag) + np.diag(moff, 1) + np.diag(moff, -1)
    for j, kk in enumerate(k):
        a[j:j + 2, j:j + 2] += kk * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return a


@given(st.integers(3, 40), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_tridiagonal_solve_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    k, mdiag, moff = _system(n, rng)
    rhs = rng.normal(size=n)
    y, piv = kernels.tridiag_stiff_mass_solve(k, mdiag, moff, rhs)
    a = _dense(k, mdiag, moff)
    assert np.all(piv > 0)
    assert np.linalg.norm(a @ y - rhs) <= 1e-9 * np.linalg.norm(a, 1) * np.linalg.norm(y) + 1e-12


def test_backends_agree():
    rng = np.random.default_rng(3)
    k, mdiag, moff = _system(500, rng)
    rhs = rng.normal(size=500)
    y1, p1 = kernels.tridiag_stiff_mass_solve(k, mdiag, moff, rhs)
    y2, p2 = _pykernels.tridiag_stiff_mass_solve(k, mdiag, moff, rhs)
    np.testing.assert_allclose(y1, y2, rtol=1e-13)
    np.testing.assert_allclose(p1, p2, rtol=1e-13)
    d = rng.uniform(0, 1, 300)
    inc = rng.normal(size=300)
    np.testing.assert_allclose(kernels.decay_scan(d, inc, 0.5),
                               _pykernels.decay_scan(d, inc, 0.5), rtol=1e-14)


def test_decay_scan_recurrence():
    out = kernels.decay_scan(np.array([0.5, 0.5, 0.5]), np.array([1.0, 1.0, 1.0]))
    np.testing.assert_allclose(out, [0.0, 1.0, 1.5, 1.75])


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("n", [2, 8])
def test_small_systems(n):
    k = np.full(n - 1, 2.0)
    mdiag = np.full(n, 1.0)
    moff = np.full(n - 1, 0.25)
    rhs = np.arange(n, dtype=float)
    y, _ = kernels.tridiag_stiff_mass_solve(k, mdiag, moff, rhs)
    np.testing.assert_allclose(_dense(k, mdiag, moff) @ y, rhs, atol=1e-13)


def test_pure_python_switch():
    import os
    import subprocess
    import sys
    env = dict(os.environ, SHARPFLOW_PURE="1")
    code = ("from sharpflow import kernels; from sharpflow.coefficients import parse_config;"
            "from sharpflow.symbols import FRACTIONAL_CONFIG; from sharpflow.mode_solver import "
            "solve_mode; print(kernels.BACKEND, repr(solve_mode(parse_config(FRACTIONAL_CONFIG),"
            " 10.0, n_cells=256).zeta))")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    from sharpflow.coefficients import parse_config
    from sharpflow.mode_solver import solve_mode
    from sharpflow.symbols import FRACTIONAL_CONFIG
    assert out[0] == "python"
    assert float(out[1]) == pytest.approx(
        solve_mode(parse_config(FRACTIONAL_CONFIG), 10.0, n_cells=256).zeta, rel=1e-13)
