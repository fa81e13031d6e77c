"""Closed-form and semi-analytic symbols for tied coefficient sets.

When sf_a * sf_m equals a constant a_tilde the mode problem becomes, in the
variable r = alpha(u),

    -f_rr + lam/a_tilde f = zeta ell / (a_tilde sf_m),   f_r = zeta c / a_tilde at the ends,

so f is an explicit exponential integral. Scaling: a problem with constant
a_tilde has zeta(lam) = a_tilde * zeta_1(lam / a_tilde), where zeta_1 is the
a_tilde = 1 symbol. Every exponential is evaluated in decaying form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial import legendre as npleg

from .coefficients import (
    SIGMA,
    CoefficientSet,
    HypothesisError,
    ModelConstants,
    boundary_c,
    compute_constants,
)
from .kernels import decay_scan
from .quadrature import integrate_jacobi, legendre_rule

LAMBDA_MIN = 1e-8
REFERENCE_LAWS = ("surface_diffusion", "intermediate", "vpmcf", "sqrt_lb")


class OracleError(RuntimeError):
    """The semi-analytic evaluation produced an invalid constraint value."""


@dataclass(frozen=True, eq=False)
class ClosedFormCase:
    """Data of a tied coefficient set.

    ``alpha1`` is half the total mass of sf_m, which is alpha(1) when m is
    even. ``coeffs`` is kept for the non-affine evaluator.
    """

    alpha1: float
    c_plus: float
    c_minus: float
    a_tilde: float = 1.0
    sigma: float = SIGMA
    affine: bool = True
    coeffs: Optional[CoefficientSet] = None

    def __post_init__(self):
        if not self.c_plus ** 2 + self.c_minus ** 2 > 0:
            raise ValueError("c_plus^2 + c_minus^2 must be positive")
        if not self.alpha1 > 0 or not self.a_tilde > 0:
            raise ValueError("alpha1 and a_tilde must be positive")

    @classmethod
    def from_coefficients(cls, coeffs: CoefficientSet):
        if not coeffs.tied:
            raise HypothesisError("closed forms need a tied coefficient set")
        e = coeffs.i - 0.5
        mass, _ = integrate_jacobi(coeffs.m_tilde, e, e)
        cp, cm = boundary_c(coeffs)
        affine = not np.any(coeffs.n.deriv(2).num.coef)
        return cls(0.5 * mass, cp, cm, float(coeffs.a_tilde), compute_constants(coeffs).sigma,
                   affine, coeffs)

    @property
    def eta(self):
        return 1.0 / (self.c_plus ** 2 + self.c_minus ** 2)


def _affine_unit(s, alpha1, cp, cm, sigma):
    """a_tilde = 1 affine symbol at sqrt(lam) = s (array), cancellation free.

    (cp^2+cm^2)(1+r^2) - 4 cp cm r is rewritten as
    (cp^2+cm^2)(1-r)^2 + 2 r (cp-cm)^2 so no terms cancel.
    """
    x = 2.0 * alpha1 * s
    r = np.exp(-x)
    one_m_r = -np.expm1(-x)
    one_m_r2 = -np.expm1(-2.0 * x)
    den = (cp * cp + cm * cm) * one_m_r * one_m_r + 2.0 * r * (cp - cm) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sigma * s * one_m_r2 / den
    return np.where(s > 0, out, 0.0)


def _as_lambda(lam):
    arr = np.asarray(lam, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("eigenvalues must be finite and nonnegative")
    return arr


def zeta_affine(case: ClosedFormCase, lam):
    """Symbol for an affine coupling n (ell = 0); vectorized in lam >= 0."""
    arr = _as_lambda(lam)
    s = np.sqrt(arr / case.a_tilde)
    out = case.a_tilde * _affine_unit(s, case.alpha1, case.c_plus, case.c_minus, case.sigma)
    return float(out) if out.ndim == 0 else out


def zeta_epsilon(eps, alpha1, lam, sigma=SIGMA):
    """Symbol of the family n = 1 + eps u with A2tau = n^4 m_tilde.

    This is the tied case a_tilde = eps^-2 with c_plus, c_minus = 1/eps +- 1,
    so r = exp(-2 alpha1 eps sqrt(lam)).
    """
    eps = float(eps)
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    arr = _as_lambda(lam)
    s = eps * np.sqrt(arr)
    cp, cm = 1.0 / eps + 1.0, 1.0 / eps - 1.0
    out = _affine_unit(s, alpha1, cp, cm, sigma) / (eps * eps)
    return float(out) if out.ndim == 0 else out


def zeta_reference(law, constants: ModelConstants, lam):
    """Reference symbols: surface_diffusion, intermediate, vpmcf, sqrt_lb."""
    arr = _as_lambda(lam)
    k = constants
    if law == "surface_diffusion":
        out = (k.sigma / k.delta) * arr
    elif law == "intermediate":
        out = k.sigma * arr / (k.delta + k.omega * arr)
    elif law == "vpmcf":
        out = np.where(arr > 0, k.sigma / k.omega, 0.0)
    elif law == "sqrt_lb":
        if k.eta is None:
            raise ValueError("sqrt_lb needs eta, which is undefined for constant coupling")
        out = k.sigma * k.eta * np.sqrt(arr)
    else:
        raise ValueError(f"unknown reference law {law!r}")
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


# -- non-affine tied coupling ---------------------------------------------

_Q = 16


def _legendre_tools():
    """Matrices mapping nodal values on a cell to running integrals."""
    xg, wg = legendre_rule(_Q)
    vinv = np.linalg.inv(npleg.legvander(xg, _Q - 1))
    integ = np.zeros((_Q + 1, _Q))
    for j in range(_Q):
        e = np.zeros(_Q)
        e[j] = 1.0
        integ[:, j] = npleg.legint(e, lbnd=-1)

    def running(t):
        return npleg.legvander(t, _Q) @ integ @ vinv

    inner = -1.0 + 0.5 * np.outer(xg + 1.0, xg + 1.0)  # Duffy points per node
    return xg, wg, running(xg), inner, running(inner.ravel())


_TOOLS = None


@dataclass(frozen=True)
class TiedSolution:
    zeta: float
    b_plus: float
    b_minus: float
    constraint: float
    cells: int


def general_tied_solution(case: ClosedFormCase, lam) -> TiedSolution:
    """Semi-analytic solve for a tied set with any coupling n.

    Works in theta with u = -cos(theta), where d alpha = sin^(2i) theta
    m_tilde d theta and ell du = ell sin(theta) d theta are smooth. With
    s = sqrt(lam / a_tilde) the a_tilde = 1 profile is

        f = s^-1 [J+ + J- + b+ e^(-s(alpha(1)-alpha)) + b- e^(-s(alpha-alpha(-1)))],
        J+(u) = int_{-1}^u e^(-s(alpha(u)-alpha(u'))) ell/2 du',

    and J- the mirror image. J+ at cell ends follows the recurrence
    J+_{j+1} = e^(-s d alpha_j) J+_j + E_j; values inside a cell use a
    Duffy-collapsed rule. b solves the 2x2 flux system and
    zeta = sigma / (int ell f du + [c f]_{-1}^{1}).
    """
    global _TOOLS
    if case.coeffs is None:
        raise ValueError("the case needs its coefficient set")
    lam = float(lam)
    if not lam >= LAMBDA_MIN:
        raise ValueError(f"eigenvalue below {LAMBDA_MIN:g} is not supported")
    if _TOOLS is None:
        _TOOLS = _legendre_tools()
    xg, wg, run_nodes, inner, run_inner = _TOOLS
    co = case.coeffs
    n, dn, d2n, mt = co.n, co.n.deriv(1), co.n.deriv(2), co.m_tilde
    s = math.sqrt(lam / case.a_tilde)

    mmax = float(np.abs(mt(np.linspace(-1, 1, 401))).max())
    K = int(max(32, math.ceil(2.0 * math.pi * s * mmax)))
    th = np.linspace(0.0, math.pi, K + 1)
    h = np.diff(th)
    hh = 0.5 * h[:, None]

    def dalpha(t):
        return np.sin(t) ** (2 * co.i) * mt(-np.cos(t))

    def half_ell(t):
        u = -np.cos(t)
        return 0.5 * n(u) * d2n(u) / dn(u) ** 2 * np.sin(t)

    TH = th[:-1, None] + hh * (xg + 1.0)
    ap = dalpha(TH)
    g = half_ell(TH)
    a_start = np.concatenate([[0.0], np.cumsum(hh[:, 0] * (ap @ wg))])
    a_start -= 0.5 * a_start[-1]  # alpha(-1) = -a1, alpha(1) = a1; only differences matter
    a1 = a_start[-1]
    A = a_start[:-1, None] + hh * (ap @ run_nodes.T)
    a_end = a_start[1:]

    E = hh[:, 0] * ((np.exp(-s * (a_end[:, None] - A)) * g) @ wg)
    Jp = decay_scan(np.exp(-s * np.diff(a_start)), E)

    TIN = th[:-1, None] + hh * (inner.ravel() + 1.0)
    A_in = (a_start[:-1, None] + hh * (ap @ run_inner.T)).reshape(K, _Q, _Q)
    G_in = half_ell(TIN).reshape(K, _Q, _Q)
    F = hh * (0.5 * (xg + 1.0)) * np.einsum(
        "kqp,p->kq", np.exp(-s * (A[:, :, None] - A_in)) * G_in, wg)
    Jp_nodes = np.exp(-s * (A - a_start[:-1, None])) * Jp[:-1, None] + F

    # int ell (J+ + J-) du = 2 int ell J+ du by the symmetry of the double integral
    int_ell_J = 2.0 * np.sum(hh * (2.0 * g) * Jp_nodes * wg)
    Jp_top = Jp[-1]
    Jm_bottom = float(np.sum(hh * np.exp(-s * (A + a1)) * g * wg))
    r = math.exp(-2.0 * s * a1)
    det = -math.expm1(-4.0 * s * a1)
    cp, cm = case.c_plus, case.c_minus
    p1, p2 = cp + Jp_top, cm - Jm_bottom
    b1 = (p1 - r * p2) / det
    b2 = (r * p1 - p2) / det
    int_ell_b = float(np.sum(hh * (2.0 * g) * (b1 * np.exp(-s * (a1 - A))
                                               + b2 * np.exp(-s * (a1 + A))) * wg))
    f_top = Jp_top + b1 + b2 * r
    f_bottom = Jm_bottom + b1 * r + b2
    cf = (int_ell_J + int_ell_b + cp * f_top - cm * f_bottom) / s
    if not (np.isfinite(cf) and cf > 0):
        raise OracleError(f"constraint value {cf!r} is not positive")
    zeta = case.a_tilde * case.sigma / cf
    return TiedSolution(float(zeta), float(b1), float(b2), float(cf), K)


def zeta_general_tied(case: ClosedFormCase, lam):
    """Symbol of a tied coefficient set with possibly non-affine coupling."""
    return general_tied_solution(case, lam).zeta
