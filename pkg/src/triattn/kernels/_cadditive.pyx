# cython: language_level=3
"""Compiled tanh-grid kernels; same contracts as ``triattn.kernels._reference``.

Built with -ffast-math so ``tanh`` over a hidden row vectorizes through
libmvec; sums over the hidden axis may be reassociated.
"""

import numpy as np
from libc.math cimport tanh
from libc.stdlib cimport free, malloc


def additive_scores(A, Bk, G, p):
    cdef const double[:, :, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :, ::1] bk = np.ascontiguousarray(Bk, dtype=np.float64)
    cdef const double[:, :, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t B = a.shape[0], P = a.shape[1], H = a.shape[2]
    cdef Py_ssize_t R = bk.shape[1], S = g.shape[1]
    out_arr = np.empty((B, P, R, S), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double *ab = <double *> malloc(2 * max(H, 1) * sizeof(double))
    cdef double *zh
    cdef const double *grow
    cdef Py_ssize_t b, i, r, s, h
    cdef double acc
    if ab == NULL:
        raise MemoryError()
    zh = ab + max(H, 1)
    try:
        with nogil:
            for b in range(B):
                for i in range(P):
                    for r in range(R):
                        for h in range(H):
                            ab[h] = a[b, i, h] + bk[b, r, h]
                        for s in range(S):
                            grow = &g[b, s, 0]
                            for h in range(H):
                                zh[h] = tanh(ab[h] + grow[h])
                            acc = 0.0
                            for h in range(H):
                                acc += pv[h] * zh[h]
                            out[b, i, r, s] = acc
    finally:
        free(ab)
    return out_arr


def additive_scores_backward(dS, A, Bk, G, p):
    cdef const double[:, :, :, ::1] ds = np.ascontiguousarray(dS, dtype=np.float64)
    cdef const double[:, :, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :, ::1] bk = np.ascontiguousarray(Bk, dtype=np.float64)
    cdef const double[:, :, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t B = a.shape[0], P = a.shape[1], H = a.shape[2]
    cdef Py_ssize_t R = bk.shape[1], S = g.shape[1]
    dA_arr = np.zeros((B, P, H), dtype=np.float64)
    dB_arr = np.zeros((B, R, H), dtype=np.float64)
    dG_arr = np.zeros((B, S, H), dtype=np.float64)
    dp_arr = np.zeros(H, dtype=np.float64)
    cdef double[:, :, ::1] dA = dA_arr
    cdef double[:, :, ::1] dB = dB_arr
    cdef double[:, :, ::1] dG = dG_arr
    cdef double[::1] dp = dp_arr
    cdef double *ab = <double *> malloc(2 * max(H, 1) * sizeof(double))
    cdef double *zh
    cdef double *arow
    cdef double *brow
    cdef double *grow_out
    cdef const double *grow
    cdef Py_ssize_t b, i, r, s, h
    cdef double gs, t
    if ab == NULL:
        raise MemoryError()
    zh = ab + max(H, 1)
    try:
        with nogil:
            for b in range(B):
                for i in range(P):
                    arow = &dA[b, i, 0]
                    for r in range(R):
                        brow = &dB[b, r, 0]
                        for h in range(H):
                            ab[h] = a[b, i, h] + bk[b, r, h]
                        for s in range(S):
                            gs = ds[b, i, r, s]
                            grow = &g[b, s, 0]
                            grow_out = &dG[b, s, 0]
                            for h in range(H):
                                zh[h] = tanh(ab[h] + grow[h])
                            for h in range(H):
                                dp[h] += gs * zh[h]
                                t = gs * pv[h] * (1.0 - zh[h] * zh[h])
                                arow[h] += t
                                brow[h] += t
                                grow_out[h] += t
    finally:
        free(ab)
    return dA_arr, dB_arr, dG_arr, dp_arr
