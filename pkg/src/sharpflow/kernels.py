"""Kernel dispatch: compiled extension when importable, Python otherwise.

Set ``SHARPFLOW_PURE=1`` to force the Python versions.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("SHARPFLOW_PURE") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def tridiag_stiff_mass_solve(k, mdiag, moff, rhs):
    """See :func:`sharpflow._pykernels.tridiag_stiff_mass_solve`."""
    return _impl.tridiag_stiff_mass_solve(_f64(k), _f64(mdiag), _f64(moff), _f64(rhs))


def decay_scan(decay, incr, start=0.0):
    """See :func:`sharpflow._pykernels.decay_scan`."""
    return _impl.decay_scan(_f64(decay), _f64(incr), float(start))
