"""Gauss-Jacobi and Gauss-Legendre rules for integrals with endpoint weights."""
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_NODES = 2**14
START_NODES = 8


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not settle before the node cap."""


@lru_cache(maxsize=256)
def jacobi_rule(n, a, b):
    """Nodes and weights for the weight (1-x)^a (1+x)^b on [-1, 1]."""
    x, w = roots_jacobi(n, a, b)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=64)
def legendre_rule(n):
    x, w = roots_legendre(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def integrate_jacobi(func, a, b, tol=1e-12, start=START_NODES, cap=MAX_NODES):
    """Adaptive Gauss-Jacobi integral of (1-x)^a (1+x)^b func(x) over [-1, 1].

    The node count doubles until two successive values agree to ``tol``
    (relative to max(1, |value|)).

    Returns:
        (value, nodes_used)
    """
    n = start
    x, w = jacobi_rule(n, a, b)
    prev = float(w @ func(x))
    while n < cap:
        n *= 2
        x, w = jacobi_rule(n, a, b)
        val = float(w @ func(x))
        if abs(val - prev) <= tol * max(1.0, abs(val)):
            return val, n
        prev = val
    raise QuadratureError(f"no agreement to {tol:g} with {cap} nodes")


def integrate_to_right_end(func, lo, expo, tol=1e-12):
    """Integral of (1-u)^expo func(u) over [lo, 1].

    The substitution u = 1 - (1-lo)(1-x)/2 turns the endpoint factor into
    an exact Jacobi weight.
    """
    half = 0.5 * (1.0 - lo)
    val, n = integrate_jacobi(lambda x: func(1.0 - half * (1.0 - x)), expo, 0.0, tol)
    return half ** (1.0 + expo) * val, n


def integrate_from_left_end(func, hi, expo, tol=1e-12):
    """Integral of (1+u)^expo func(u) over [-1, hi]."""
    half = 0.5 * (1.0 + hi)
    val, n = integrate_jacobi(lambda x: func(-1.0 + half * (1.0 + x)), 0.0, expo, tol)
    return half ** (1.0 + expo) * val, n
