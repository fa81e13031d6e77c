# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the sequential kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def tridiag_stiff_mass_solve(double[::1] k, double[::1] mdiag, double[::1] moff,
                             double[::1] rhs):
    cdef Py_ssize_t n = rhs.shape[0]
    cdef Py_ssize_t j
    cdef double kk, mm, ep
    e_arr = np.empty(n)
    d_arr = np.empty(n)
    lo_arr = np.zeros(n)
    z_arr = np.empty(n)
    y_arr = np.empty(n)
    cdef double[::1] e = e_arr
    cdef double[::1] d = d_arr
    cdef double[::1] lo = lo_arr
    cdef double[::1] z = z_arr
    cdef double[::1] y = y_arr
    with nogil:
        e[0] = mdiag[0]
        d[0] = k[0] + e[0]
        z[0] = rhs[0]
        for j in range(1, n):
            kk = k[j - 1]
            mm = moff[j - 1]
            ep = e[j - 1]
            e[j] = mdiag[j] + (kk * (2.0 * mm + ep) - mm * mm) / (kk + ep)
            if j < n - 1:
                d[j] = k[j] + e[j]
            else:
                d[j] = e[j]
            lo[j] = (mm - kk) / d[j - 1]
            z[j] = rhs[j] - lo[j] * z[j - 1]
        y[n - 1] = z[n - 1] / d[n - 1]
        for j in range(n - 2, -1, -1):
            y[j] = z[j] / d[j] - lo[j + 1] * y[j + 1]
    return y_arr, d_arr


def decay_scan(double[::1] decay, double[::1] incr, double start=0.0):
    cdef Py_ssize_t n = decay.shape[0]
    cdef Py_ssize_t j
    cdef double x = start
    out_arr = np.empty(n + 1)
    cdef double[::1] out = out_arr
    with nogil:
        out[0] = start
        for j in range(n):
            x = decay[j] * x + incr[j]
            out[j + 1] = x
    return out_arr
