# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow

cnp.import_array()


cdef inline Py_ssize_t _clip(Py_ssize_t v, Py_ssize_t hi) nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


def _max1(double[::1] a, int L):
    cdef Py_ssize_t side = 1 << L
    cdef double[::1] pre = np.zeros(side + 1)
    cdef double[::1] out = np.array(a, copy=True)
    cdef Py_ssize_t i, k, g, s, e, c, cand, lo, hi, x
    cdef double v
    for i in range(side):
        pre[i + 1] = pre[i] + a[i]
    with nogil:
        for k in range(L + 1):
            g = 1 << k
            s = 1 << (L - k)
            for c in range(g):
                v = (pre[(c + 1) * s] - pre[c * s]) / s
                for x in range(c * s, (c + 1) * s):
                    if v > out[x]:
                        out[x] = v
            if k == 0:
                continue
            e = (s + 1) // 2
            for cand in range(g):
                lo = cand * s - e
                hi = (cand + 1) * s + e
                v = (pre[_clip(hi, side)] - pre[_clip(lo, side)]) / (s + 2 * e)
                for x in range(_clip(lo, side), _clip(hi, side)):
                    if v > out[x]:
                        out[x] = v
    return np.asarray(out)


def _max2(double[:, ::1] a, int L):
    cdef Py_ssize_t side = 1 << L
    cdef double[:, ::1] pre = np.zeros((side + 1, side + 1))
    cdef double[:, ::1] out = np.array(a, copy=True)
    cdef Py_ssize_t i, j, k, g, s, e, c0, c1, lo0, hi0, lo1, hi1, x0, x1
    cdef double v, area
    for i in range(side):
        for j in range(side):
            pre[i + 1, j + 1] = pre[i, j + 1] + pre[i + 1, j] - pre[i, j] + a[i, j]
    with nogil:
        for k in range(L + 1):
            g = 1 << k
            s = 1 << (L - k)
            area = <double>(s * s)
            for c0 in range(g):
                for c1 in range(g):
                    lo0 = c0 * s
                    hi0 = lo0 + s
                    lo1 = c1 * s
                    hi1 = lo1 + s
                    v = (pre[hi0, hi1] - pre[lo0, hi1] - pre[hi0, lo1] + pre[lo0, lo1]) / area
                    for x0 in range(lo0, hi0):
                        for x1 in range(lo1, hi1):
                            if v > out[x0, x1]:
                                out[x0, x1] = v
            if k == 0:
                continue
            e = (s + 1) // 2
            area = <double>((s + 2 * e) * (s + 2 * e))
            for c0 in range(g):
                lo0 = _clip(c0 * s - e, side)
                hi0 = _clip((c0 + 1) * s + e, side)
                for c1 in range(g):
                    lo1 = _clip(c1 * s - e, side)
                    hi1 = _clip((c1 + 1) * s + e, side)
                    v = (pre[hi0, hi1] - pre[lo0, hi1] - pre[hi0, lo1] + pre[lo0, lo1]) / area
                    for x0 in range(lo0, hi0):
                        for x1 in range(lo1, hi1):
                            if v > out[x0, x1]:
                                out[x0, x1] = v
    return np.asarray(out)


def maximal_function(absf, int n, int L):
    absf = np.ascontiguousarray(absf, dtype=np.float64)
    if n == 1:
        return _max1(absf, L)
    return _max2(absf, L)


def _rule(str rule):
    if rule == "midpoint":
        return np.array([0.5]), np.array([1.0])
    if rule == "gauss2":
        d = 0.5 / sqrt(3.0)
        return np.array([0.5 - d, 0.5 + d]), np.array([0.5, 0.5])
    raise ValueError(f"unknown quadrature rule {rule!r}")


def assemble_named(str name, int n, int L, str rule, double tau, int component):
    cdef int kind
    if name == "truncated_hilbert":
        kind = 0
    elif name == "truncated_riesz":
        kind = 1
    else:
        raise ValueError(f"no compiled evaluator for {name!r}")
    offs_np, w_np = _rule(rule)
    cdef double[::1] offs = offs_np
    cdef double[::1] w1 = w_np
    cdef int nq = offs.shape[0]
    cdef Py_ssize_t side = 1 << L
    cdef Py_ssize_t N = side ** n
    cdef double h = 1.0 / side
    cdef double vol = pow(h, n)
    cdef double t2 = tau * tau
    cdef cnp.ndarray[cnp.float64_t, ndim=2] res = np.zeros((N, N))
    cdef double[:, ::1] out = res
    cdef Py_ssize_t i, j, i0, i1, j0, j1
    cdef int p, q, p0, p1, q0, q1
    cdef double acc, t, z0, z1, r2, wgt
    with nogil:
        if n == 1:
            for i in range(N):
                for j in range(N):
                    acc = 0.0
                    for p in range(nq):
                        for q in range(nq):
                            t = (i + offs[p] - j - offs[q]) * h
                            acc = acc + w1[p] * w1[q] * t / (t * t + t2)
                    out[i, j] = acc * vol
        else:
            for i in range(N):
                i0 = i // side
                i1 = i % side
                for j in range(N):
                    j0 = j // side
                    j1 = j % side
                    acc = 0.0
                    for p0 in range(nq):
                        for p1 in range(nq):
                            for q0 in range(nq):
                                for q1 in range(nq):
                                    z0 = (i0 + offs[p0] - j0 - offs[q0]) * h
                                    z1 = (i1 + offs[p1] - j1 - offs[q1]) * h
                                    r2 = z0 * z0 + z1 * z1 + t2
                                    wgt = w1[p0] * w1[p1] * w1[q0] * w1[q1]
                                    if component == 0:
                                        acc = acc + wgt * z0 / (r2 * sqrt(r2))
                                    else:
                                        acc = acc + wgt * z1 / (r2 * sqrt(r2))
                    out[i, j] = acc * vol
    return res
