# cython: language_level=3
"""Compiled inner loops: cyclic coordinate descent, shift-aware coordinate
descent and CSR products.

Every function here has a line-for-line twin in ``_pykernels``; the two are
checked against each other in the test suite.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


cdef inline double _shrink(double b, double lam) noexcept nogil:
    if b > lam:
        return b - lam
    if b < -lam:
        return b + lam
    return 0.0


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0
    for k in range(n):
        acc += a[k] * b[k]
    return acc


cdef inline void _axpy(double alpha, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(n):
        y[k] += alpha * x[k]


cdef (int, double) _cd_core(const double[:, ::1] Dt, const double[::1] col_sq,
                            const double[::1] lam, double* z, double* r,
                            int max_cycles, double tol) noexcept nogil:
    cdef Py_ssize_t p = Dt.shape[0]
    cdef Py_ssize_t n = Dt.shape[1]
    cdef Py_ssize_t j
    cdef int cycle = 0
    cdef double change = 0.0, b, znew, delta
    while cycle < max_cycles:
        change = 0.0
        for j in range(p):
            if col_sq[j] <= 0.0:
                if z[j] != 0.0:
                    _axpy(z[j], &Dt[j, 0], r, n)
                    z[j] = 0.0
                continue
            b = _dot(&Dt[j, 0], r, n) + col_sq[j] * z[j]
            znew = _shrink(b, lam[j]) / col_sq[j]
            delta = znew - z[j]
            if delta != 0.0:
                _axpy(-delta, &Dt[j, 0], r, n)
                z[j] = znew
                if fabs(delta) > change:
                    change = fabs(delta)
        cycle += 1
        if change < tol:
            break
    return cycle, change


def cd_column(const double[:, ::1] Dt, const double[::1] col_sq,
              const double[::1] lam, double[::1] z, double[::1] r,
              int max_cycles, double tol):
    """Run up to ``max_cycles`` cyclic sweeps on one column, in place.

    ``Dt`` holds the regressors as rows. Stops early once the largest
    coordinate change of a sweep drops below ``tol``. Returns
    ``(cycles_run, last_change)``.
    """
    cdef (int, double) out
    with nogil:
        out = _cd_core(Dt, col_sq, lam, &z[0], &r[0], max_cycles, tol)
    return out[0], out[1]


def cd_columns(const double[:, ::1] Dt, const double[::1] col_sq,
               const double[::1] lam, double[:, ::1] Zt, double[:, ::1] Rt,
               int max_cycles, double tol):
    """Column-batched :func:`cd_column`; rows of ``Zt``/``Rt`` are columns."""
    cdef Py_ssize_t m = Zt.shape[0]
    cdef Py_ssize_t c
    cdef (int, double) out
    cycles = np.zeros(m, dtype=np.int64)
    changes = np.zeros(m, dtype=np.float64)
    cdef long long[::1] cyc = cycles
    cdef double[::1] chg = changes
    with nogil:
        for c in range(m):
            out = _cd_core(Dt, col_sq, lam, &Zt[c, 0], &Rt[c, 0], max_cycles, tol)
            cyc[c] = out[0]
            chg[c] = out[1]
    return cycles, changes


def shift_cd_column(const double[:, :, ::1] A, const double[:, ::1] q,
                    const double[:, :, ::1] G, const double[::1] lam,
                    double[::1] z, long long[::1] sidx, double[::1] r,
                    bint select, int cycles):
    """Shift selection followed by coordinate descent for one column.

    ``A[s, i]`` is atom ``i`` under shift ``s``, ``q[s, i]`` its squared norm
    and ``G[i, s, t] = <A[s, i], A[t, i]>``. ``sidx`` holds the current shift
    index per atom and is updated in place along with ``z`` and ``r``.
    Returns the largest coordinate change of the last CD sweep.
    """
    cdef Py_ssize_t S = A.shape[0]
    cdef Py_ssize_t p = A.shape[1]
    cdef Py_ssize_t n = A.shape[2]
    cdef Py_ssize_t i, s, cur, best, k
    cdef double c, val, bestval, zold, znew, delta, bcur, change = 0.0
    cdef int cyc
    cdef double* rp = &r[0]
    with nogil:
        if select:
            for i in range(p):
                cur = sidx[i]
                if q[cur, i] <= 0.0:
                    continue
                zold = z[i]
                bcur = _dot(&A[cur, i, 0], rp, n) + zold * G[i, cur, cur]
                best = cur
                bestval = _shrink(fabs(bcur), lam[i])
                bestval = bestval * bestval / q[cur, i]
                c = bcur
                for s in range(S):
                    if s == cur or q[s, i] <= 0.0:
                        continue
                    val = _dot(&A[s, i, 0], rp, n) + zold * G[i, s, cur]
                    delta = _shrink(fabs(val), lam[i])
                    delta = delta * delta / q[s, i]
                    if delta > bestval * (1.0 + 1e-12) and delta > 0.0:
                        bestval = delta
                        best = s
                        c = val
                znew = _shrink(c, lam[i]) / q[best, i]
                if zold != 0.0:
                    _axpy(zold, &A[cur, i, 0], rp, n)
                if znew != 0.0:
                    _axpy(-znew, &A[best, i, 0], rp, n)
                z[i] = znew
                sidx[i] = best
        for cyc in range(cycles):
            change = 0.0
            for i in range(p):
                s = sidx[i]
                if q[s, i] <= 0.0:
                    continue
                c = _dot(&A[s, i, 0], rp, n) + q[s, i] * z[i]
                znew = _shrink(c, lam[i]) / q[s, i]
                delta = znew - z[i]
                if delta != 0.0:
                    _axpy(-delta, &A[s, i, 0], rp, n)
                    z[i] = znew
                    if fabs(delta) > change:
                        change = fabs(delta)
    return change


def csr_matvec(const long long[::1] row_ptr, const long long[::1] col_idx,
               const double[::1] vals, const double[::1] x):
    cdef Py_ssize_t rows = row_ptr.shape[0] - 1
    cdef Py_ssize_t r, k
    cdef double acc
    y = np.zeros(rows, dtype=np.float64)
    cdef double[::1] yv = y
    with nogil:
        for r in range(rows):
            acc = 0.0
            for k in range(row_ptr[r], row_ptr[r + 1]):
                acc += vals[k] * x[col_idx[k]]
            yv[r] = acc
    return y


def csr_matmat(const long long[::1] row_ptr, const long long[::1] col_idx,
               const double[::1] vals, const double[:, ::1] X):
    """CSR times a dense C-ordered block ``X`` (cols x batch)."""
    cdef Py_ssize_t rows = row_ptr.shape[0] - 1
    cdef Py_ssize_t B = X.shape[1]
    cdef Py_ssize_t r, k, b
    cdef double v
    Y = np.zeros((rows, B), dtype=np.float64)
    cdef double[:, ::1] Yv = Y
    with nogil:
        for r in range(rows):
            for k in range(row_ptr[r], row_ptr[r + 1]):
                v = vals[k]
                for b in range(B):
                    Yv[r, b] += v * X[col_idx[k], b]
    return Y
