# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled accumulation of kernel-weighted local moments.

Both routines expect the data coordinates sorted ascending in the first
coordinate so that each query only visits the points inside its window.
Data points may carry a multiplicity ``mult`` (number of coincident raw
observations) and ``usum`` (sum of their responses).
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _kern(double z, int gamma, double const) nogil:
    cdef double r, out
    cdef int k
    if z <= -1.0 or z >= 1.0:
        return 0.0
    r = 1.0 - z * z
    out = const
    for k in range(gamma):
        out *= r
    return out


cdef Py_ssize_t _lower(const double[::1] x, double v) nogil:
    # first index with x[i] > v
    cdef Py_ssize_t lo = 0, hi = x.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if x[mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef Py_ssize_t _upper(const double[::1] x, double v) nogil:
    # first index with x[i] >= v
    cdef Py_ssize_t lo = 0, hi = x.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if x[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def moments_1d(const double[::1] query, const double[::1] x, const double[::1] mult,
               const double[::1] usum, double h, int gamma, double const):
    """Columns: S0, S1, S2, Su, S1u, count with T = query - x."""
    cdef Py_ssize_t nq = query.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((nq, 6), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, lo, hi
    cdef double q, tk, w, wm, s0, s1, s2, su, stu, cnt
    with nogil:
        for i in range(nq):
            q = query[i]
            lo = _lower(x, q - h)
            hi = _upper(x, q + h)
            s0 = 0.0; s1 = 0.0; s2 = 0.0; su = 0.0; stu = 0.0; cnt = 0.0
            for k in range(lo, hi):
                tk = q - x[k]
                w = _kern(tk / h, gamma, const)
                if w > 0.0:
                    wm = w * mult[k]
                    s0 += wm
                    s1 += wm * tk
                    s2 += wm * tk * tk
                    su += w * usum[k]
                    stu += w * tk * usum[k]
                    cnt += mult[k]
            out[i, 0] = s0
            out[i, 1] = s1
            out[i, 2] = s2
            out[i, 3] = su
            out[i, 4] = stu
            out[i, 5] = cnt
    return out_arr


def moments_2d(const double[::1] qs, const double[::1] qt, const double[::1] a,
               const double[::1] b, const double[::1] mult, const double[::1] usum,
               double h, int gamma, double const):
    """Columns: S0, Sa, Sb, Saa, Sab, Sbb, Su, Sau, Sbu, count.

    The design columns are Ta = qs - a and Tb = qt - b; weights are the
    product kernel.
    """
    cdef Py_ssize_t nq = qs.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((nq, 10), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, lo, hi
    cdef double s, t, ta, tb, wa, wb, w, wm, uk
    cdef double s0, sa, sb, saa, sab, sbb, su, sau, sbu, cnt
    with nogil:
        for i in range(nq):
            s = qs[i]
            t = qt[i]
            lo = _lower(a, s - h)
            hi = _upper(a, s + h)
            s0 = 0.0; sa = 0.0; sb = 0.0; saa = 0.0; sab = 0.0; sbb = 0.0
            su = 0.0; sau = 0.0; sbu = 0.0; cnt = 0.0
            for k in range(lo, hi):
                tb = t - b[k]
                wb = _kern(tb / h, gamma, const)
                if wb <= 0.0:
                    continue
                ta = s - a[k]
                wa = _kern(ta / h, gamma, const)
                if wa <= 0.0:
                    continue
                w = wa * wb
                wm = w * mult[k]
                uk = usum[k]
                s0 += wm
                sa += wm * ta
                sb += wm * tb
                saa += wm * ta * ta
                sab += wm * ta * tb
                sbb += wm * tb * tb
                su += w * uk
                sau += w * ta * uk
                sbu += w * tb * uk
                cnt += mult[k]
            out[i, 0] = s0
            out[i, 1] = sa
            out[i, 2] = sb
            out[i, 3] = saa
            out[i, 4] = sab
            out[i, 5] = sbb
            out[i, 6] = su
            out[i, 7] = sau
            out[i, 8] = sbu
            out[i, 9] = cnt
    return out_arr
