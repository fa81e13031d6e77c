"""Pure-Python reference versions of the sequential kernels.

These are the fallback when the compiled extension is unavailable and the
baseline the benchmark compares against.
"""
import numpy as np


def tridiag_stiff_mass_solve(k, mdiag, moff, rhs):
    """Solve (K + M) y = rhs for a P1 stiffness-plus-mass tridiagonal matrix.

    K is the P1 stiffness matrix built from per-cell coefficients ``k``
    (so each row of K sums to zero) and M is a symmetric tridiagonal mass
    matrix. The LDL^T pivots are carried as ``k_j + e_j`` where the excess
    ``e_j`` is updated without subtracting large stiffness terms, which keeps
    the factorization accurate when the stiffness dwarfs the mass.

    Args:
        k: per-cell stiffness, shape (n-1,).
        mdiag: mass diagonal, shape (n,).
        moff: mass off-diagonal, shape (n-1,).
        rhs: right-hand side, shape (n,).

    Returns:
        (y, pivots) with pivots the LDL^T diagonal.
    """
    n = rhs.shape[0]
    e = np.empty(n)
    d = np.empty(n)
    lo = np.zeros(n)
    z = np.empty(n)
    e[0] = mdiag[0]
    d[0] = k[0] + e[0]
    z[0] = rhs[0]
    for j in range(1, n):
        kk = k[j - 1]
        mm = moff[j - 1]
        ep = e[j - 1]
        e[j] = mdiag[j] + (kk * (2.0 * mm + ep) - mm * mm) / (kk + ep)
        d[j] = (k[j] if j < n - 1 else 0.0) + e[j]
        lo[j] = (mm - kk) / d[j - 1]
        z[j] = rhs[j] - lo[j] * z[j - 1]
    y = np.empty(n)
    y[n - 1] = z[n - 1] / d[n - 1]
    for j in range(n - 2, -1, -1):
        y[j] = z[j] / d[j] - lo[j + 1] * y[j + 1]
    return y, d


def decay_scan(decay, incr, start=0.0):
    """Run the recurrence x[j+1] = decay[j] * x[j] + incr[j] from x[0] = start."""
    n = decay.shape[0]
    out = np.empty(n + 1)
    out[0] = start
    x = start
    for j in range(n):
        x = decay[j] * x + incr[j]
        out[j + 1] = x
    return out
