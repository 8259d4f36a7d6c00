# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same contracts as ``desvq._fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef inline double _rha(double x) noexcept nogil:
    # round half away from zero; branch-free on the fraction so random data
    # does not stall on mispredictions
    if not fabs(x) < 4503599627370496.0:  # 2**52: already integral, or nan
        return x
    cdef double r = <double>(<long long>x)
    cdef double d = x - r
    return r + <double>(d >= 0.5) - <double>(d <= -0.5)


def round_half_away(x):
    cdef const double[::1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty(flat.shape[0])
    cdef double[::1] of = out
    cdef Py_ssize_t i, n = flat.shape[0]
    with nogil:
        for i in range(n):
            of[i] = _rha(flat[i])
    return out.reshape(np.shape(x))


def quantize_codes(w, scale, zero, qmax):
    w = np.asarray(w, dtype=np.float64)
    sc = np.broadcast_to(np.asarray(scale, dtype=np.float64), w.shape)
    zr = np.broadcast_to(np.asarray(zero, dtype=np.float64), w.shape)
    cdef const double[::1] wf = np.ascontiguousarray(w).ravel()
    cdef const double[::1] sf = np.ascontiguousarray(sc).ravel()
    cdef const double[::1] zf = np.ascontiguousarray(zr).ravel()
    out = np.empty(wf.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] of = out
    cdef double top = <double>qmax
    cdef double t
    cdef Py_ssize_t i, n = wf.shape[0]
    with nogil:
        for i in range(n):
            t = _rha(wf[i] / sf[i]) + zf[i]
            t = 0.0 if t < 0.0 else (top if t > top else t)
            of[i] = <cnp.int64_t>t
    return out.reshape(w.shape)


def band_scatter(values, Py_ssize_t a):
    cdef const double[:, ::1] vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t ndiag = vals.shape[0], b = vals.shape[1]
    cdef Py_ssize_t n = (ndiag - 1) // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((a, b))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, j, row
    with nogil:
        for r in range(ndiag):
            for j in range(b):
                row = j + r - n
                if row >= 0 and row < a:
                    o[row, j] = vals[r, j]
    return out


def band_gather(g, Py_ssize_t n):
    cdef const double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t a = gv.shape[0], b = gv.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((2 * n + 1, b))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, j, row
    with nogil:
        for r in range(2 * n + 1):
            for j in range(b):
                row = j + r - n
                if row >= 0 and row < a:
                    o[r, j] = gv[row, j]
    return out


def jacobi_sweeps(A, V, double tol, int max_sweeps):
    """Cyclic one-sided Jacobi on the columns of A (in place), rotations into V.

    Columns are worked on through Fortran-ordered scratch copies and written
    back at the end.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="fortran"] Af = np.asfortranarray(A, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="fortran"] Vf = np.asfortranarray(V, dtype=np.float64)
    cdef double[::1, :] a = Af
    cdef double[::1, :] v = Vf
    cdef Py_ssize_t m = a.shape[0], b = a.shape[1], nv = v.shape[0]
    cdef Py_ssize_t p, q, i
    cdef double alpha, beta, gamma, zeta, t, c, s, x, y
    cdef int sweep, result = -1
    cdef bint rotated
    if b < 2:
        return 0
    with nogil:
        for sweep in range(1, max_sweeps + 1):
            rotated = False
            for p in range(b - 1):
                for q in range(p + 1, b):
                    alpha = 0.0
                    beta = 0.0
                    gamma = 0.0
                    for i in range(m):
                        x = a[i, p]
                        y = a[i, q]
                        alpha += x * x
                        beta += y * y
                        gamma += x * y
                    if not (fabs(gamma) > tol * sqrt(alpha * beta)):
                        continue
                    rotated = True
                    zeta = (beta - alpha) / (2.0 * gamma)
                    if zeta >= 0:
                        t = 1.0 / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                    else:
                        t = -1.0 / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = c * t
                    for i in range(m):
                        x = a[i, p]
                        y = a[i, q]
                        a[i, p] = c * x - s * y
                        a[i, q] = s * x + c * y
                    for i in range(nv):
                        x = v[i, p]
                        y = v[i, q]
                        v[i, p] = c * x - s * y
                        v[i, q] = s * x + c * y
            if not rotated:
                result = sweep
                break
    A[...] = Af
    V[...] = Vf
    return result
