import json
import math

import numpy as np
import pytest

from sharpflow.coefficients import HypothesisError, compute_constants, parse_config
from sharpflow.mode_solver import (
    Mesh1D,
    assemble,
    convergence_study,
    solve_mode,
    solve_on_mesh,
    write_mode_csv,
)
from sharpflow.oracle import ClosedFormCase, zeta_affine, zeta_general_tied

from conftest import tied_config

LAMBDAS = [1.0, 10.0, 100.0, 1e3, 1e4]


@pytest.mark.parametrize("lam", LAMBDAS)
def test_matches_closed_form(affine, lam):
    sol = solve_mode(affine, lam)
    exact = zeta_affine(ClosedFormCase.from_coefficients(affine), lam)
    assert abs(sol.zeta - exact) / exact <= 1e-6


@pytest.mark.parametrize("lam", [1.0, 1e4])
def test_energy_and_dual_identities(affine, lam):
    sol = solve_mode(affine, lam)
    s = compute_constants(affine).sigma * sol.zeta
    assert abs(sol.energy - s) <= 1e-8 * (1 + s)
    assert abs(sol.zeta - sol.zeta_alt) / sol.zeta <= 1e-6
    assert abs(sol.constraint_residual) <= 1e-12


def test_second_order_convergence(affine):
    exact = zeta_affine(ClosedFormCase.from_coefficients(affine), 100.0)
    study = convergence_study(affine, 100.0, [256, 512, 1024, 2048], reference=exact)
    assert study.order >= 1.8
    errs = [r.error for r in study.rows]
    assert all(b < a for a, b in zip(errs, errs[1:]))


@pytest.mark.parametrize("i", [2, 3])
def test_higher_degeneracy_against_oracle(i):
    c = tied_config([2.0, 1.0], i=i)
    case = ClosedFormCase.from_coefficients(c)
    for lam in (1.0, 1e3):
        exact = zeta_affine(case, lam)
        assert abs(solve_mode(c, lam).zeta - exact) / exact <= 1e-6


def test_non_affine_against_oracle(quadratic):
    case = ClosedFormCase.from_coefficients(quadratic)
    for lam in (1.0, 1e3):
        exact = zeta_general_tied(case, lam)
        assert abs(solve_mode(quadratic, lam).zeta - exact) / exact <= 1e-6


@pytest.mark.parametrize("a_tilde", [0.5, 3.0])
def test_a_tilde_rescaling(a_tilde):
    base = tied_config([2.0, 1.0])
    scaled = tied_config([2.0, 1.0], a_tilde=a_tilde)
    lam = 40.0
    z1 = solve_mode(base, lam / a_tilde).zeta
    assert solve_mode(scaled, lam).zeta == pytest.approx(a_tilde * z1, rel=1e-6)


def test_explicit_a2tau_equal_to_tied_form_matches():
    # for n = 2 + u the tied A2tau is n^4 / a_tilde
    explicit = parse_config({"m_tilde": {"type": "poly", "coeffs": [1.0]}, "i": 1,
                             "n": {"type": "poly", "coeffs": [2.0, 1.0]},
                             "a2tau": {"type": "poly", "coeffs": [16.0, 32.0, 24.0, 8.0, 1.0]}})
    tied = tied_config([2.0, 1.0])
    assert solve_mode(explicit, 10.0).zeta == pytest.approx(solve_mode(tied, 10.0).zeta,
                                                            rel=1e-9)


def test_symmetric_positive_system(affine):
    sys = assemble(affine, 10.0, Mesh1D.graded(64))
    a = sys.matrix()
    np.testing.assert_allclose(a, a.T, rtol=0, atol=1e-12 * np.abs(a).max())
    assert np.all(np.linalg.eigvalsh(a) > 0)


def test_meshes():
    m = Mesh1D.graded(64)
    assert m.nodes[0] == -1 and m.nodes[-1] == 1
    np.testing.assert_allclose(m.nodes + m.nodes[::-1], 0, atol=1e-15)
    with pytest.raises(ValueError):
        Mesh1D.graded(63)
    with pytest.raises(ValueError):
        Mesh1D.uniform(4)


def test_lambda_validation(affine):
    for bad in (0.0, -1.0, math.nan):
        with pytest.raises(ValueError):
            solve_mode(affine, bad)


def test_constant_coupling_is_refused(isd):
    with pytest.raises(HypothesisError):
        solve_mode(isd, 1.0)


def test_uniform_mesh_still_converges(affine):
    exact = zeta_affine(ClosedFormCase.from_coefficients(affine), 1.0)
    sol = solve_on_mesh(affine, 1.0, Mesh1D.uniform(1024))
    assert abs(sol.zeta - exact) / exact < 1e-4


def test_profile_output(affine, tmp_path):
    sol = solve_mode(affine, 10.0, n_cells=64)
    side = write_mode_csv(sol, tmp_path / "f.csv", {"config_hash": "abc"})
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "u,f" and len(lines) == sol.nodes.size + 1
    meta = json.loads(side.read_text())
    assert meta["zeta"] == sol.zeta and meta["config_hash"] == "abc"
