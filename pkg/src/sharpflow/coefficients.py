"""Coefficient functions, derived weights, hypotheses and model constants.

The model is described by a mobility ``m(u) = (1-u^2)^i * m_tilde(u)``, a
coupling ``n(u)`` and a relaxation product ``A2tau(u)`` on the order
parameter range u in [-1, 1]. Every coefficient is a rational function of u,
so first and second derivatives are exact.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial

from .quadrature import (
    integrate_from_left_end,
    integrate_jacobi,
    integrate_to_right_end,
)

SIGMA = math.pi / 2  # interface tension of the double-obstacle potential


class ConfigError(ValueError):
    """Malformed or unsupported coefficient configuration."""


class HypothesisError(ValueError):
    """A coefficient set violates a standing hypothesis."""


def _poly(coeffs):
    return Polynomial(np.asarray(coeffs, dtype=float))


def _trim(p):
    return p.trim(tol=0.0)


class ScalarFunction:
    """Rational function num(u)/den(u) with exact derivatives.

    ``kind`` and ``params`` record the configuration form the function came
    from ("poly", "affine", "constant" or "derived").
    """

    def __init__(self, num, den=None, kind="derived", params=None):
        self.num = _trim(num if isinstance(num, Polynomial) else _poly(num))
        self.den = _trim(Polynomial([1.0]) if den is None else
                         (den if isinstance(den, Polynomial) else _poly(den)))
        self.kind = kind
        self.params = dict(params or {})
        self._derivs = {}

    @classmethod
    def poly(cls, coeffs):
        coeffs = [float(c) for c in coeffs]
        return cls(_poly(coeffs), kind="poly", params={"coeffs": coeffs})

    @classmethod
    def affine(cls, beta0, beta1):
        """beta0 + beta1 * (1 + u)."""
        beta0, beta1 = float(beta0), float(beta1)
        return cls(_poly([beta0 + beta1, beta1]), kind="affine",
                   params={"beta0": beta0, "beta1": beta1})

    @classmethod
    def constant(cls, value=1.0):
        return cls(_poly([float(value)]), kind="constant", params={})

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return self.num(u) / self.den(u)

    def deriv(self, order=1):
        """Derivative of the given order as another ScalarFunction."""
        if order == 0:
            return self
        if order not in self._derivs:
            prev = self.deriv(order - 1)
            num = prev.num.deriv() * prev.den - prev.num * prev.den.deriv()
            self._derivs[order] = ScalarFunction(num, prev.den * prev.den)
        return self._derivs[order]

    def d1(self, u):
        return self.deriv(1)(u)

    def d2(self, u):
        return self.deriv(2)(u)

    @property
    def is_constant(self):
        return self.num.degree() <= 0 and self.den.degree() <= 0

    @property
    def is_even(self):
        odd = lambda p: np.all(p.coef[1::2] == 0.0)  # noqa: E731
        return bool(odd(self.num) and odd(self.den))

    def __mul__(self, other):
        if not isinstance(other, ScalarFunction):
            other = ScalarFunction.constant(other)
        return ScalarFunction(self.num * other.num, self.den * other.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, ScalarFunction):
            other = ScalarFunction.constant(other)
        return ScalarFunction(self.num * other.den, self.den * other.num)

    def __pow__(self, k):
        return ScalarFunction(self.num ** k, self.den ** k)

    def to_config(self):
        if self.kind == "poly":
            return {"type": "poly", "coeffs": list(self.params["coeffs"])}
        if self.kind == "affine":
            return {"type": "affine", **self.params}
        if self.kind == "constant":
            return {"type": "constant"}
        raise ConfigError("derived functions have no configuration form")

    def __repr__(self):
        return f"ScalarFunction(num={self.num.coef.tolist()}, den={self.den.coef.tolist()})"


def _deflate(p, root):
    """Split p = (u - root)^k q with q(root) != 0, returning (k, q)."""
    k = 0
    scale = max(np.abs(p.coef).max(), 1.0)
    while p.degree() > 0 and abs(p(root)) <= 1e-14 * scale:
        p, _ = divmod(p, Polynomial([-root, 1.0]))
        k += 1
    return k, p


@dataclass(frozen=True)
class WeightForm:
    """Weight (1+u)^e_minus (1-u)^e_plus g(u) with g smooth and positive."""

    e_minus: float
    e_plus: float
    g: ScalarFunction

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return (1 + u) ** self.e_minus * (1 - u) ** self.e_plus * self.g(u)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Model coefficients.

    Args:
        m_tilde: smooth positive factor of the mobility.
        i: degeneracy exponent, m = (1-u^2)^i m_tilde.
        n: coupling. A constant n selects the constant-coupling branch.
        a2tau: explicit A2tau, or None in tied mode.
        a_tilde: tied constant; in tied mode A2tau is chosen so that the
            product of the two derived weights sf_a * sf_m equals a_tilde.
    """

    m_tilde: ScalarFunction
    i: int
    n: ScalarFunction
    a2tau: Optional[ScalarFunction] = None
    a_tilde: Optional[float] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.i, (int, np.integer)) or isinstance(self.i, bool) or self.i < 1:
            raise ConfigError("degeneracy exponent i must be a positive integer")
        if (self.a2tau is None) == (self.a_tilde is None):
            raise ConfigError("give exactly one of an explicit a2tau or a tied a_tilde")
        if self.a_tilde is not None:
            if not (math.isfinite(self.a_tilde) and self.a_tilde > 0):
                raise ConfigError("a_tilde must be a positive finite number")
            if self.n.is_constant:
                raise ConfigError("tied mode needs a non-constant coupling n")

    @property
    def tied(self):
        return self.a_tilde is not None

    @property
    def branch(self):
        return "constant_coupling" if self.n.is_constant else "monotone_coupling"

    @property
    def m_is_even(self):
        return self.m_tilde.is_even

    def a2tau_factors(self):
        """Return (k_plus, k_minus, R) with A2tau = (1-u)^k_plus (1+u)^k_minus R."""
        if "a2tau_factors" not in self._cache:
            if self.tied:
                dn = self.n.deriv()
                rest = self.m_tilde * self.n ** 4 / (dn * dn) / self.a_tilde
                out = (self.i - 1, self.i - 1, rest)
            else:
                kp, q = _deflate(self.a2tau.num, 1.0)
                km, q = _deflate(q, -1.0)
                out = (kp, km, ScalarFunction(q, self.a2tau.den))
            self._cache["a2tau_factors"] = out
        return self._cache["a2tau_factors"]

    def a2tau_value(self, u):
        u = np.asarray(u, dtype=float)
        if self.tied:
            kp, km, rest = self.a2tau_factors()
            return (1 - u * u) ** (self.i - 1) * rest(u)
        return self.a2tau(u)

    def sf_m_form(self):
        """Weight form of sf_m = m / sqrt(1-u^2)."""
        e = self.i - 0.5
        return WeightForm(e, e, self.m_tilde)

    def sf_a_form(self):
        """Weight form of sf_a = (n^2/n')^2 / (A2tau sqrt(1-u^2))."""
        self._require_monotone()
        kp, km, rest = self.a2tau_factors()
        if self.tied:
            g = ScalarFunction.constant(self.a_tilde) / self.m_tilde
        else:
            dn = self.n.deriv()
            g = self.n ** 4 / (dn * dn) / rest
        return WeightForm(-0.5 - km, -0.5 - kp, g)

    def _require_monotone(self):
        if self.branch != "monotone_coupling":
            raise HypothesisError("the constrained mode problem needs a monotone coupling n")

    def to_config(self):
        cfg = {"m_tilde": self.m_tilde.to_config(), "i": int(self.i), "n": self.n.to_config()}
        if self.tied:
            cfg["a2tau"] = {"type": "tied", "a_tilde": float(self.a_tilde)}
        else:
            cfg["a2tau"] = self.a2tau.to_config()
        return cfg

    def config_hash(self):
        return config_hash(self.to_config())


def config_hash(cfg):
    """64-bit hex digest of a canonicalized JSON config."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- config parsing -------------------------------------------------------

def _number(x, what):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(f"{what}: expected a finite number, got {x!r}")
    return float(x)


def _parse_function(spec, what, allow_constant=True):
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{what}: expected an object with a 'type' field")
    kind = spec["type"]
    if kind == "poly":
        coeffs = spec.get("coeffs")
        if not isinstance(coeffs, list) or not coeffs:
            raise ConfigError(f"{what}: 'coeffs' must be a non-empty list")
        return ScalarFunction.poly([_number(c, f"{what}.coeffs") for c in coeffs])
    if kind == "affine":
        return ScalarFunction.affine(_number(spec.get("beta0"), f"{what}.beta0"),
                                     _number(spec.get("beta1"), f"{what}.beta1"))
    if kind == "constant" and allow_constant:
        return ScalarFunction.constant(1.0)
    raise ConfigError(f"{what}: unsupported type {kind!r}")


def parse_config(cfg):
    """Build a CoefficientSet from a decoded JSON config."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    potential = cfg.get("potential", "double_obstacle")
    if potential != "double_obstacle":
        raise ConfigError(f"potential {potential!r} is not supported; only double_obstacle is")
    for key in ("m_tilde", "i", "n", "a2tau"):
        if key not in cfg:
            raise ConfigError(f"missing key {key!r}")
    i = cfg["i"]
    if isinstance(i, bool) or not isinstance(i, int) or i < 1:
        raise ConfigError("'i' must be a positive integer")
    m_tilde = _parse_function(cfg["m_tilde"], "m_tilde")
    n = _parse_function(cfg["n"], "n")
    a2 = cfg["a2tau"]
    if isinstance(a2, dict) and a2.get("type") == "tied":
        a_tilde = _number(a2.get("a_tilde"), "a2tau.a_tilde")
        return CoefficientSet(m_tilde, i, n, a_tilde=a_tilde)
    return CoefficientSet(m_tilde, i, n, a2tau=_parse_function(a2, "a2tau"))


def load_config(path):
    """Read a JSON coefficient config from ``path``."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return parse_config(cfg)


# -- derived weights -----------------------------------------------------

@dataclass(frozen=True)
class DerivedWeights:
    m: np.ndarray
    sf_m: np.ndarray
    sf_a: np.ndarray
    a: np.ndarray
    c: np.ndarray
    ell: np.ndarray


def derived_weights(coeffs: CoefficientSet, u):
    """Pointwise weights m, sf_m, sf_a, a, c = n/n', ell = n n''/n'^2.

    ``u`` must lie strictly inside (-1, 1). On the constant-coupling branch
    the n'-dependent entries are NaN.
    """
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) >= 1):
        raise ValueError("derived weights are singular at |u| >= 1")
    w = 1 - u * u
    m = w ** coeffs.i * coeffs.m_tilde(u)
    sf_m = m / np.sqrt(w)
    nv, dn, d2n = coeffs.n(u), coeffs.n.d1(u), coeffs.n.d2(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        if coeffs.branch == "monotone_coupling":
            q = (nv * nv / dn) ** 2 / coeffs.a2tau_value(u)
            c = nv / dn
            ell = nv * d2n / (dn * dn)
        else:
            q = c = ell = np.full_like(u, np.nan)
    return DerivedWeights(m=m, sf_m=sf_m, sf_a=q / np.sqrt(w), a=q / w, c=c, ell=ell)


def boundary_c(coeffs):
    """c = n/n' at u = +1 and u = -1."""
    coeffs._require_monotone()
    return float(coeffs.n(1.0) / coeffs.n.d1(1.0)), float(coeffs.n(-1.0) / coeffs.n.d1(-1.0))


def alpha(coeffs: CoefficientSet, u):
    """alpha(u) = integral of sf_m from 0 to u, for u in [-1, 1]."""
    u = float(u)
    if not -1.0 <= u <= 1.0:
        raise ValueError("alpha is defined on [-1, 1]")
    if u == 0.0:
        return 0.0
    e = coeffs.i - 0.5
    mt = coeffs.m_tilde
    if coeffs.m_is_even and u < 0:
        return -alpha(coeffs, -u)
    if u > 0:
        g = lambda x: (1 + x) ** e * mt(x)  # noqa: E731
        whole, _ = integrate_to_right_end(g, 0.0, e)
        if u == 1.0:
            return whole
        tail, _ = integrate_to_right_end(g, u, e)
        return whole - tail
    g = lambda x: (1 - x) ** e * mt(x)  # noqa: E731
    whole, _ = integrate_from_left_end(g, 0.0, e)
    if u == -1.0:
        return -whole
    head, _ = integrate_from_left_end(g, u, e)
    return -(whole - head)


# -- constants -----------------------------------------------------------

@dataclass(frozen=True)
class ModelConstants:
    """Scalars entering the flow laws."""

    sigma: float
    delta: float
    omega: float
    eta: Optional[float]
    alpha1: float

    @property
    def sigma_over_delta(self):
        return self.sigma / self.delta

    def to_dict(self):
        return {
            "sigma": self.sigma,
            "delta": self.delta,
            "omega": self.omega,
            "eta": self.eta,
            "alpha1": self.alpha1,
            "sigma_over_delta": self.sigma_over_delta,
        }


def compute_constants(coeffs: CoefficientSet) -> ModelConstants:
    if "constants" in coeffs._cache:
        return coeffs._cache["constants"]
    one = lambda x: np.ones_like(x)  # noqa: E731
    sigma, _ = integrate_jacobi(one, 0.5, 0.5)
    e = coeffs.i - 0.5
    mass, _ = integrate_jacobi(coeffs.m_tilde, e, e)
    delta = 4.0 / mass
    kp, km, rest = coeffs.a2tau_factors()
    omega, _ = integrate_jacobi(rest, 0.5 + kp, 0.5 + km)
    eta = None
    if coeffs.branch == "monotone_coupling":
        cp, cm = boundary_c(coeffs)
        eta = 1.0 / (cp * cp + cm * cm)
    out = ModelConstants(sigma=sigma, delta=delta, omega=omega, eta=eta,
                         alpha1=alpha(coeffs, 1.0))
    coeffs._cache["constants"] = out
    return out


# -- hypothesis certificates ----------------------------------------------

@dataclass(frozen=True)
class HypothesisResult:
    name: str
    passed: bool
    witness_u: Optional[float]
    value: Optional[float]
    note: str = ""


@dataclass(frozen=True)
class HypothesisReport:
    results: tuple

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def failures(self):
        return [r for r in self.results if not r.passed]

    def __getitem__(self, name):
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


def chebyshev_lobatto(n):
    return np.cos(np.pi * np.arange(n) / (n - 1))[::-1].copy()


def chebyshev_interior(n):
    return np.cos(np.pi * (np.arange(n) + 0.5) / n)[::-1].copy()


def _min_check(name, u, vals, positive=True, note=""):
    vals = np.asarray(vals, dtype=float)
    # values at rounding level relative to the typical size count as zero
    fin = vals[np.isfinite(vals)]
    floor = 1e-12 * float(np.median(np.abs(fin))) if fin.size else 0.0
    bad = ~np.isfinite(vals) | (vals <= floor) if positive else ~np.isfinite(vals)
    j = int(np.argmax(bad)) if bad.any() else int(np.argmin(vals))
    return HypothesisResult(name, not bad.any(), float(u[j]), float(vals[j]), note)


def check_hypotheses(coeffs: CoefficientSet, grid_size: int = 101) -> HypothesisReport:
    """Grid certificates for the standing hypotheses.

    Closed-interval checks use Chebyshev-Lobatto points, open-interval
    checks use interior Chebyshev points (eight times denser for e3).
    """
    if grid_size < 11:
        raise ValueError("grid_size must be at least 11")
    uc = chebyshev_lobatto(grid_size)
    ui = chebyshev_interior(grid_size)
    uf = chebyshev_interior(8 * grid_size)
    res = [_min_check("m1", uc, coeffs.m_tilde(uc), note="min m_tilde > 0")]

    nv = coeffs.n(uc)
    res.append(_min_check("n1", uc, np.abs(nv), note="min |n| > 0"))
    if coeffs.branch == "monotone_coupling":
        dn = coeffs.n.d1(uc)
        # a sign change of n' between grid points means n' vanishes there
        flips = np.flatnonzero(np.sign(dn[:-1]) * np.sign(dn[1:]) < 0)
        if flips.size:
            j = int(flips[0])
            res.append(HypothesisResult("n2", False, float(uc[j]), float(dn[j]),
                                        "min |n'| > 0: n' changes sign"))
        else:
            res.append(_min_check("n2", uc, np.abs(dn), note="min |n'| > 0"))
        # sign restriction: n > 0 and n' >= 0 on [-1, 1]
        s = np.minimum(nv, np.where(dn >= 0, np.inf, dn))
        res.append(_min_check("sign", uc, s, note="n > 0 and n' >= 0"))
    else:
        res.append(HypothesisResult("n2", True, None, None, "constant coupling: not applicable"))
        res.append(_min_check("sign", uc, nv, note="n > 0"))

    res.append(_min_check("tau1", ui, coeffs.a2tau_value(ui), note="A2tau > 0 inside"))
    if coeffs.branch == "monotone_coupling":
        with np.errstate(divide="ignore", invalid="ignore"):
            dw = derived_weights(coeffs, ui)
            prod = dw.sf_a * dw.sf_m
        if coeffs.tied:
            dev = np.abs(prod - coeffs.a_tilde) / coeffs.a_tilde
            j = int(np.argmax(dev))
            res.append(HypothesisResult("tau2", bool(dev[j] <= 1e-12), float(ui[j]),
                                        float(prod[j]), "sf_a*sf_m == a_tilde"))
        else:
            res.append(_min_check("tau2", ui, prod, note="a*m smooth and positive"))
    else:
        res.append(HypothesisResult("tau2", True, None, None, "constant coupling: not applicable"))
    with np.errstate(divide="ignore", invalid="ignore"):
        iota = coeffs.n(uf) ** 2 / (coeffs.a2tau_value(uf) * np.sqrt(1 - uf * uf))
    res.append(_min_check("e3", uf, iota, note="inf n^2/(A2tau sqrt(1-u^2)) > 0"))
    return HypothesisReport(tuple(res))


def require_admissible(coeffs: CoefficientSet, grid_size: int = 101):
    """Raise HypothesisError naming every failed hypothesis."""
    rep = check_hypotheses(coeffs, grid_size)
    if not rep.passed:
        names = ", ".join(f"{r.name} (u={r.witness_u:.6g}, value={r.value:.6g})"
                          for r in rep.failures())
        raise HypothesisError(f"hypotheses violated: {names}")
    return rep
