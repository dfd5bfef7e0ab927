# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler-Maruyama kernel for linear noise intensities.

Contract identical to ``_fallback.advance_linear``.  The loop runs trial by
trial without the GIL.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, exp, NAN, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double RESCALE_LOW = 1e-50
cdef double RESCALE_HIGH = 1e50


cdef inline double _log_norm(double nd2, double logs, double nc2) nogil:
    cdef double ld, lc, hi, lo
    ld = 0.5 * log(nd2) + logs if nd2 > 0 else -INFINITY
    lc = 0.5 * log(nc2) if nc2 > 0 else -INFINITY
    if ld >= lc:
        hi, lo = ld, lc
    else:
        hi, lo = lc, ld
    if hi == -INFINITY:
        return hi
    return hi + 0.5 * log(1.0 + exp(2.0 * (lo - hi)))


def advance_linear(double[:, :, ::1] d,
                   double[:, ::1] c,
                   double[::1] logs,
                   const Py_ssize_t[::1] recv,
                   const Py_ssize_t[::1] send,
                   const Py_ssize_t[::1] bm,
                   const double[:, ::1] K,
                   const double[:, :, ::1] G,
                   double dt,
                   const double[:, :, ::1] dW,
                   Py_ssize_t stride,
                   double[:, :, :, ::1] out_d,
                   double[:, :, ::1] out_c,
                   double[:, ::1] out_logs,
                   unsigned char[::1] alive,
                   double guard):
    cdef Py_ssize_t B = d.shape[0], N = d.shape[1], n = d.shape[2]
    cdef Py_ssize_t S = dW.shape[1], C = recv.shape[0]
    cdef Py_ssize_t b, s, ch, p, q, i, j, slot
    cdef double w, acc, nd2, nc2, m, dm, scale, nrm
    cdef double log_guard = log(guard)
    cdef double *inc
    cdef double *v
    inc = <double *> malloc(N * n * sizeof(double))
    v = <double *> malloc(n * sizeof(double))
    if inc == NULL or v == NULL:
        free(inc)
        free(v)
        raise MemoryError()
    try:
        with nogil:
            for b in range(B):
                if not alive[b]:
                    continue
                scale = exp(logs[b])
                for s in range(S):
                    for p in range(N * n):
                        inc[p] = 0.0
                    for ch in range(C):
                        i = recv[ch]
                        j = send[ch]
                        w = dW[b, s, bm[ch]]
                        for q in range(n):
                            v[q] = d[b, j, q] - d[b, i, q]
                        for p in range(n):
                            acc = 0.0
                            for q in range(n):
                                acc = acc + (dt * K[p, q] + w * G[ch, p, q]) * v[q]
                            inc[i * n + p] += acc
                    for q in range(n):
                        m = 0.0
                        for p in range(N):
                            m = m + inc[p * n + q]
                        m = m / N
                        c[b, q] += m * scale
                        dm = 0.0
                        for p in range(N):
                            d[b, p, q] += inc[p * n + q]
                            dm = dm + d[b, p, q]
                        dm = dm / N
                        for p in range(N):
                            d[b, p, q] -= dm
                    if (s + 1) % stride == 0:
                        slot = (s + 1) // stride - 1
                        nd2 = 0.0
                        nc2 = 0.0
                        for q in range(n):
                            nc2 = nc2 + N * c[b, q] * c[b, q]
                            for p in range(N):
                                nd2 = nd2 + d[b, p, q] * d[b, p, q]
                        if not (_log_norm(nd2, logs[b], nc2) <= log_guard):
                            alive[b] = 0
                            logs[b] = NAN
                            for q in range(n):
                                c[b, q] = NAN
                                for p in range(N):
                                    d[b, p, q] = NAN
                            break
                        nrm = sqrt(nd2)
                        if nrm > 0 and (nrm < RESCALE_LOW or nrm > RESCALE_HIGH):
                            for q in range(n):
                                for p in range(N):
                                    d[b, p, q] /= nrm
                            logs[b] += log(nrm)
                            scale = exp(logs[b])
                        out_logs[b, slot] = logs[b]
                        for q in range(n):
                            out_c[b, slot, q] = c[b, q]
                            for p in range(N):
                                out_d[b, slot, p, q] = d[b, p, q]
    finally:
        free(inc)
        free(v)
