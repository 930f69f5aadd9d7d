# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trace contractions used inside the barrier Newton loop.

Each matrix product is written once into a flat contiguous buffer (with a
transposed copy), so every Gram entry is a single contiguous dot product and
only one triangle is computed.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _dot(const double* x, const double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    i = 0
    while i + 4 <= n:
        s0 += x[i] * y[i]
        s1 += x[i + 1] * y[i + 1]
        s2 += x[i + 2] * y[i + 2]
        s3 += x[i + 3] * y[i + 3]
        i += 4
    while i < n:
        s0 += x[i] * y[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


cdef void _gram_upper(const double* u, const double* v, double* out,
                      Py_ssize_t na, Py_ssize_t n) noexcept nogil:
    """``out[a, b] = <u_a, v_b>`` for b >= a, mirrored; rows are length ``n``."""
    cdef Py_ssize_t a, b
    cdef double s
    for a in range(na):
        for b in range(a, na):
            s = _dot(u + a * n, v + b * n, n)
            out[a * na + b] = s
            out[b * na + a] = s


def logdet_derivs(double[:, ::1] xinv, double[:, :, ::1] coef):
    grad, curv = logdet_derivs_batch(np.asarray(xinv)[None], np.asarray(coef)[None])
    return grad[0], curv[0]


def logdet_derivs_batch(const double[:, :, ::1] xinv, const double[:, :, :, ::1] coef):
    cdef Py_ssize_t ns = coef.shape[0]
    cdef Py_ssize_t na = coef.shape[1]
    cdef Py_ssize_t d = coef.shape[2]
    cdef Py_ssize_t dd = d * d
    cdef Py_ssize_t m, a, i, j, k
    cdef double s, xik
    cdef double* ya
    cdef double* yta
    cdef const double* ca
    cdef const double* xm
    y_arr = np.empty((na, dd), dtype=np.float64)
    yt_arr = np.empty((na, dd), dtype=np.float64)
    grad_arr = np.empty((ns, na), dtype=np.float64)
    curv_arr = np.empty((ns, na, na), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] yt = yt_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, :, ::1] curv = curv_arr

    with nogil:
        for m in range(ns):
            xm = &xinv[m, 0, 0]
            for a in range(na):
                ya = &y[a, 0]
                yta = &yt[a, 0]
                ca = &coef[m, a, 0, 0]
                for i in range(dd):
                    ya[i] = 0.0
                for i in range(d):
                    for k in range(d):
                        xik = xm[i * d + k]
                        if xik != 0.0:
                            for j in range(d):
                                ya[i * d + j] += xik * ca[k * d + j]
                s = 0.0
                for i in range(d):
                    s += ya[i * d + i]
                    for j in range(d):
                        yta[j * d + i] = ya[i * d + j]
                grad[m, a] = s
            _gram_upper(&y[0, 0], &yt[0, 0], &curv[m, 0, 0], na, dd)
    return grad_arr, curv_arr


def quad_gram(const double[:, :, ::1] coef, const double[:, ::1] q, const double[:, ::1] p):
    cdef Py_ssize_t na = coef.shape[0]
    cdef Py_ssize_t d = coef.shape[1]
    cdef Py_ssize_t n = coef.shape[2]
    cdef Py_ssize_t dn = d * n
    cdef Py_ssize_t a, i, j, k
    cdef double v
    cdef double* qa
    cdef double* ta
    cdef const double* ca
    qa_arr = np.empty(dn, dtype=np.float64)
    t_arr = np.empty((na, dn), dtype=np.float64)
    gram_arr = np.empty((na, na), dtype=np.float64)
    cdef double[::1] qab = qa_arr
    cdef double[:, ::1] t = t_arr
    cdef double[:, ::1] gram = gram_arr

    with nogil:
        qa = &qab[0]
        for a in range(na):
            ca = &coef[a, 0, 0]
            ta = &t[a, 0]
            for i in range(dn):
                qa[i] = 0.0
                ta[i] = 0.0
            for i in range(d):
                for k in range(d):
                    v = q[i, k]
                    if v != 0.0:
                        for j in range(n):
                            qa[i * n + j] += v * ca[k * n + j]
            for i in range(d):
                for k in range(n):
                    v = qa[i * n + k]
                    if v != 0.0:
                        for j in range(n):
                            ta[i * n + j] += v * p[k, j]
        _gram_upper(&t[0, 0], &coef[0, 0, 0], &gram[0, 0], na, dn)
    return gram_arr
