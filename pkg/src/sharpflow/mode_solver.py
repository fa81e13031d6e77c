"""P1 finite elements for the constrained one-mode problem.

For an eigenvalue lam > 0 the profile f on [-1, 1] and the multiplier zeta
solve

    int sf_a f' phi' + lam sf_m f phi du = zeta int (phi + c phi') du
    int (f + c f') du = sigma

for all test functions phi, with c = n/n'. With A the stiffness-plus-mass
matrix and B the load vector the Schur complement gives
zeta = sigma / (B^T A^{-1} B) and f = zeta A^{-1} B.

Mesh nodes are stored together with their distances to both endpoints so
that quadrature near u = +-1 never forms 1 - u by subtraction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import SIGMA, CoefficientSet, HypothesisError, require_admissible
from .kernels import tridiag_stiff_mass_solve
from .quadrature import jacobi_rule, legendre_rule

DEFAULT_CELLS = 2048
DEFAULT_GRADING = 2.0
CELL_NODES = 16
COND_LIMIT = 1e30


class ModeSolverError(RuntimeError):
    """The discrete problem could not be solved reliably."""


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Nodes on [-1, 1] with their endpoint distances dm = 1+u and dp = 1-u."""

    nodes: np.ndarray
    dm: np.ndarray
    dp: np.ndarray
    grading: str = "custom"

    def __post_init__(self):
        u = self.nodes
        if u.ndim != 1 or u.size < 9:
            raise ValueError("a mesh needs at least 8 cells")
        if u[0] != -1.0 or u[-1] != 1.0:
            raise ValueError("mesh must start at -1 and end at +1")
        if np.any(np.diff(u) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")

    @property
    def n_cells(self):
        return self.nodes.size - 1

    @classmethod
    def from_distances(cls, dm, dp, grading="custom"):
        dm = np.asarray(dm, dtype=float)
        dp = np.asarray(dp, dtype=float)
        u = np.where(dm < dp, dm - 1.0, 1.0 - dp)
        return cls(u, dm, dp, grading)

    @classmethod
    def uniform(cls, n_cells):
        t = np.arange(n_cells + 1) / n_cells
        return cls.from_distances(2.0 * t, 2.0 * (1.0 - t), "uniform")

    @classmethod
    def graded(cls, n_cells, exponent=DEFAULT_GRADING):
        """Symmetric mesh with end distances (1 - j/h)^... pattern, h = n_cells/2."""
        if n_cells % 2:
            raise ValueError("graded meshes need an even number of cells")
        half = n_cells // 2
        t = np.arange(half + 1) / half
        dend = (1.0 - t) ** exponent
        dm = np.concatenate([dend[::-1], 2.0 - dend[1:]])
        dp = np.concatenate([2.0 - dend[::-1], dend[1:]])
        return cls.from_distances(dm, dp, f"graded({exponent:g})")

    def describe(self):
        return {"n_cells": int(self.n_cells), "grading": self.grading}


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Tridiagonal A = K + M and load B on the active nodes.

    ``k`` holds per-cell stiffness (K has rows summing to zero), ``mdiag`` and
    ``moff`` the mass matrix. End cells whose stiffness weight is not
    integrable are tied: their outer node copies its neighbour, recorded by
    ``tie_left`` / ``tie_right``.
    """

    k: np.ndarray
    mdiag: np.ndarray
    moff: np.ndarray
    B: np.ndarray
    tie_left: bool
    tie_right: bool
    cell_mass: tuple = field(repr=False)
    B_full: np.ndarray = field(repr=False)

    def matrix(self):
        """A as a dense array (for inspection and small tests)."""
        n = self.B.size
        A = np.diag(self.mdiag.copy())
        A[np.arange(n - 1), np.arange(1, n)] += self.moff
        A[np.arange(1, n), np.arange(n - 1)] += self.moff
        kk = np.zeros(n)
        kk[:-1] += self.k
        kk[1:] += self.k
        A += np.diag(kk)
        A[np.arange(n - 1), np.arange(1, n)] -= self.k
        A[np.arange(1, n), np.arange(n - 1)] -= self.k
        return A

    def expand(self, y):
        """Map active-node values back to all mesh nodes."""
        if self.tie_left:
            y = np.concatenate([[y[0]], y])
        if self.tie_right:
            y = np.concatenate([y, [y[-1]]])
        return y


def _cell_rule(mesh, form, q=CELL_NODES):
    """Per-cell quadrature for a weight (1+u)^em (1-u)^ep g(u).

    Interior cells use Gauss-Legendre; the two end cells use Gauss-Jacobi so
    the endpoint power is integrated exactly. Returns (U, W) of shape (N, q).
    """
    u, dm, dp = mesh.nodes, mesh.dm, mesh.dp
    em, ep = form.e_minus, form.e_plus
    xg, wg = legendre_rule(q)
    h = np.diff(u)
    s = 0.5 * (xg + 1.0)
    DM = dm[:-1, None] + h[:, None] * s
    DP = dp[:-1, None] - h[:, None] * s
    U = u[:-1, None] + h[:, None] * s
    W = wg * (0.5 * h)[:, None] * DM ** em * DP ** ep
    # end cells: distance to the endpoint is h (1-x)/2 under the weight (1-x)^e;
    # a non-integrable power (e <= -1) gets zero weight, the caller ties that cell
    for cell, e_end, e_far, side in ((0, em, ep, -1.0), (-1, ep, em, 1.0)):
        if e_end <= -1.0:
            W[cell] = 0.0
            continue
        xj, wj = jacobi_rule(q, e_end, 0.0)
        d = h[cell] * 0.5 * (1.0 - xj)
        U[cell] = side * (1.0 - d)
        W[cell] = wj * (0.5 * h[cell]) ** (1.0 + e_end) * (2.0 - d) ** e_far
    return U, W * form.g(U)


def _check_lambda(lam):
    lam = float(lam)
    if not np.isfinite(lam) or lam <= 0:
        raise ValueError(f"eigenvalue must be positive, got {lam!r}")
    return lam


def _admissible(coeffs):
    if "admissible" not in coeffs._cache:
        if coeffs.branch != "monotone_coupling":
            raise HypothesisError("the constrained mode problem needs a monotone coupling n")
        require_admissible(coeffs)
        coeffs._cache["admissible"] = True


def _cell_data(coeffs, mesh):
    """Lambda-independent cell integrals: stiffness, unit mass, load pieces."""
    # single slot keyed by mesh identity; races between threads only cost a recompute
    key = "last_cells"
    hit = coeffs._cache.get(key)
    if hit is not None and hit[0] is mesh:
        return hit[1]
    u = mesh.nodes
    h = np.diff(u)
    fa, fm = coeffs.sf_a_form(), coeffs.sf_m_form()
    tie = (fa.e_minus <= -1.0, fa.e_plus <= -1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        _, Wa = _cell_rule(mesh, fa)
    k = Wa.sum(axis=1) / h ** 2
    if tie[0]:
        k[0] = 0.0
    if tie[1]:
        k[-1] = 0.0
    Um, Wm = _cell_rule(mesh, fm)
    p_left = (u[1:, None] - Um) / h[:, None]
    p_right = 1.0 - p_left
    m11 = (Wm * p_left * p_left).sum(axis=1)
    m12 = (Wm * p_left * p_right).sum(axis=1)
    m22 = (Wm * p_right * p_right).sum(axis=1)
    xg, wg = legendre_rule(CELL_NODES)
    Uc = u[:-1, None] + 0.5 * h[:, None] * (xg + 1.0)
    n, dn = coeffs.n, coeffs.n.deriv()
    cint = 0.5 * h * ((n(Uc) / dn(Uc)) @ wg)
    Bf = np.zeros(u.size)
    Bf[:-1] += 0.5 * h - cint / h
    Bf[1:] += 0.5 * h + cint / h
    out = (k, (m11, m12, m22), Bf, tie)
    coeffs._cache[key] = (mesh, out)
    return out


def assemble(coeffs: CoefficientSet, lam, mesh: Mesh1D) -> AssembledSystem:
    """Assemble A = stiffness + lam * mass and the load/constraint vector B."""
    lam = _check_lambda(lam)
    _admissible(coeffs)
    k, (m11, m12, m22), Bf, (tl, tr) = _cell_data(coeffs, mesh)
    m11, m12, m22 = lam * m11, lam * m12, lam * m22
    md = np.zeros(mesh.nodes.size)
    md[:-1] += m11
    md[1:] += m22
    mo = m12.copy()
    B = Bf.copy()
    kk = k
    if tl:
        # the tied end basis function is phi_0 + phi_1
        md[1] += md[0] + 2.0 * mo[0]
        B[1] += B[0]
        md, mo, B, kk = md[1:], mo[1:], B[1:], kk[1:]
    if tr:
        md[-2] += md[-1] + 2.0 * mo[-1]
        B[-2] += B[-1]
        md, mo, B, kk = md[:-1], mo[:-1], B[:-1], kk[:-1]
    return AssembledSystem(kk, md, mo, B, tl, tr, (m11, m12, m22), Bf)


@dataclass(frozen=True, eq=False)
class ModeSolution:
    lam: float
    nodes: np.ndarray
    f: np.ndarray
    zeta: float
    energy: float
    constraint_residual: float
    zeta_alt: float
    schur: float
    mesh: Mesh1D

    def metadata(self):
        return {
            "lambda": self.lam,
            "zeta": self.zeta,
            "zeta_alt": self.zeta_alt,
            "energy": self.energy,
            "constraint_residual": self.constraint_residual,
            "mesh": self.mesh.describe(),
        }


def solve_on_mesh(coeffs: CoefficientSet, lam, mesh: Mesh1D) -> ModeSolution:
    """Schur-complement solve of the saddle system on a given mesh."""
    sysm = assemble(coeffs, lam, mesh)
    y, piv = tridiag_stiff_mass_solve(sysm.k, sysm.mdiag, sysm.moff, sysm.B)
    if not np.all(piv > 0):
        raise ModeSolverError("factorization lost positive definiteness; "
                              "use fewer cells or a milder grading")
    cond = piv.max() / piv.min()
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ModeSolverError(f"pivot ratio {cond:.3g} exceeds {COND_LIMIT:g}; "
                              "use fewer cells or a milder grading")
    schur = float(sysm.B @ y)
    if not schur > 0:
        raise HypothesisError(f"B^T A^-1 B = {schur:g} is not positive")
    zeta = SIGMA / schur
    f = zeta * sysm.expand(y)
    m11, m12, m22 = sysm.cell_mass
    fl, fr = f[:-1], f[1:]
    k_full, _, _, _ = _cell_data(coeffs, mesh)
    df = np.diff(f)
    energy = float(np.sum(k_full * df * df)
                   + np.sum(m11 * fl * fl + 2.0 * m12 * fl * fr + m22 * fr * fr))
    zeta_alt = 0.5 * float(np.sum((m11 + m12) * fl + (m12 + m22) * fr))
    resid = abs(float(sysm.B_full @ f) - SIGMA)
    return ModeSolution(float(lam), mesh.nodes, f, zeta, energy, resid, zeta_alt, schur, mesh)


def equidistributed_mesh(coeffs, pilot: ModeSolution, blend=0.1):
    """Remesh with cell density following (sf_a f''^2)^(1/3).

    This equidistributes the local P1 energy error of the pilot profile;
    a fraction ``blend`` of the old density is kept so smooth regions are
    not starved. The cell count is unchanged.
    """
    mesh = pilot.mesh
    u, dm, dp = mesh.nodes, mesh.dm, mesh.dp
    N = mesh.n_cells
    h = np.diff(u)
    slope = np.diff(pilot.f) / h
    fpp = np.zeros(N + 1)
    fpp[1:-1] = np.diff(slope) / (0.5 * (h[:-1] + h[1:]))
    fc = np.maximum(np.abs(fpp[:-1]), np.abs(fpp[1:]))
    dmc = 0.5 * (dm[:-1] + dm[1:])
    dpc = 0.5 * (dp[:-1] + dp[1:])
    fa = coeffs.sf_a_form()
    uc = np.where(dmc < dpc, dmc - 1.0, 1.0 - dpc)
    rho = (dmc ** fa.e_minus * dpc ** fa.e_plus * fa.g(uc) * fc * fc) ** (1.0 / 3.0)
    base = 1.0 / h
    tot = np.sum(rho * h)
    rho = (1 - blend) * rho / tot + blend * base / np.sum(base * h) if tot > 0 else base
    cum = np.concatenate([[0.0], np.cumsum(rho * h)])
    cum /= cum[-1]
    t = np.arange(N + 1) / N
    ndm = np.interp(t, cum, dm)
    ndp = np.interp(t, cum, dp)
    left = ndm < ndp
    ndm, ndp = np.where(left, ndm, 2.0 - ndp), np.where(left, 2.0 - ndm, ndp)
    ndm[0], ndp[0], ndm[-1], ndp[-1] = 0.0, 2.0, 2.0, 0.0
    return Mesh1D.from_distances(ndm, ndp, f"adapted({mesh.grading})")


def default_mesh(coeffs, lam, n_cells=DEFAULT_CELLS, exponent=DEFAULT_GRADING):
    """Endpoint-graded pilot followed by one equidistribution pass."""
    pilot = solve_on_mesh(coeffs, lam, Mesh1D.graded(n_cells, exponent))
    return equidistributed_mesh(coeffs, pilot)


def solve_mode(coeffs: CoefficientSet, lam, mesh=None, n_cells=DEFAULT_CELLS) -> ModeSolution:
    """Solve the mode problem for eigenvalue ``lam``.

    Args:
        coeffs: coefficient set on the monotone-coupling branch.
        lam: eigenvalue, > 0.
        mesh: a Mesh1D to solve on. When omitted, a graded pilot solve on
            ``n_cells`` cells is refined by one equidistribution pass.
        n_cells: cell count for the default mesh.
    """
    lam = _check_lambda(lam)
    if mesh is None:
        mesh = default_mesh(coeffs, lam, n_cells)
    return solve_on_mesh(coeffs, lam, mesh)


@dataclass(frozen=True)
class ConvergenceRow:
    n_cells: int
    h_max: float
    zeta: float
    error: float


@dataclass(frozen=True)
class ConvergenceStudy:
    rows: tuple
    reference: float
    reference_kind: str
    order: float


def convergence_study(coeffs, lam, meshes, reference=None):
    """Tabulate zeta over a mesh sequence of increasing size.

    Args:
        meshes: at least three Mesh1D objects or cell counts (cell counts use
            the default mesh strategy).
        reference: exact value when an oracle is available; otherwise the
            finest mesh serves as reference.

    Returns:
        ConvergenceStudy with the observed order from the last two errors.
    """
    if len(meshes) < 3:
        raise ValueError("a convergence study needs at least three meshes")
    sols = []
    for m in meshes:
        sols.append(solve_mode(coeffs, lam, n_cells=m) if isinstance(m, (int, np.integer))
                    else solve_mode(coeffs, lam, mesh=m))
    sizes = [s.mesh.n_cells for s in sols]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("meshes must have increasing cell counts")
    kind = "oracle"
    if reference is None:
        reference, kind = sols[-1].zeta, "finest"
        sols_used = sols[:-1]
    else:
        sols_used = sols
    rows = tuple(ConvergenceRow(s.mesh.n_cells, float(np.diff(s.nodes).max()), s.zeta,
                                abs(s.zeta - reference)) for s in sols_used)
    e1, e2 = rows[-2].error, rows[-1].error
    order = float(np.log(e1 / e2) / np.log(rows[-1].n_cells / rows[-2].n_cells)) \
        if e1 > 0 and e2 > 0 else float("inf")
    return ConvergenceStudy(rows, float(reference), kind, order)


def write_mode_csv(sol: ModeSolution, path, extra=None):
    """Write ``u,f`` rows and a JSON sidecar (metadata plus ``extra``) next to ``path``."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("u,f\n")
        for u, f in zip(sol.nodes, sol.f):
            fh.write(f"{float(u)!r},{float(f)!r}\n")
    side = sidecar_path(path)
    meta = sol.metadata()
    meta.update(extra or {})
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def sidecar_path(path):
    path = Path(path)
    side = path.with_suffix(".json")
    return side if side != path else path.with_name(path.name + ".meta.json")
