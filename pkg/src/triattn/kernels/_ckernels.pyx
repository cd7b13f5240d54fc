# cython: language_level=3
"""Compiled trilinear kernels; same contracts as ``triattn.kernels._reference``.

Strict IEEE build. Inner loops run over contiguous rows with no reductions so
the compiler can vectorize them without reassociating sums.
"""

import numpy as np


def trilinear_scores(X, Y, Z):
    cdef const double[:, :, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, :, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    # (B, D, S) so the innermost loop walks context positions contiguously
    cdef const double[:, :, ::1] zt = np.ascontiguousarray(np.transpose(Z, (0, 2, 1)), dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], P = x.shape[1], D = x.shape[2]
    cdef Py_ssize_t R = y.shape[1], S = zt.shape[2]
    out_arr = np.zeros((B, P, R, S), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, p, r, s, d
    cdef double w
    cdef double *row
    cdef const double *zrow
    with nogil:
        for b in range(B):
            for p in range(P):
                for r in range(R):
                    row = &out[b, p, r, 0]
                    for d in range(D):
                        w = x[b, p, d] * y[b, r, d]
                        zrow = &zt[b, d, 0]
                        for s in range(S):
                            row[s] += w * zrow[s]
    return out_arr


def trilinear_combine(T, Y, Z):
    cdef const double[:, :, :, ::1] t = np.ascontiguousarray(T, dtype=np.float64)
    cdef const double[:, :, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[:, :, ::1] z = np.ascontiguousarray(Z, dtype=np.float64)
    cdef Py_ssize_t B = t.shape[0], P = t.shape[1], R = t.shape[2], S = t.shape[3]
    cdef Py_ssize_t D = y.shape[2]
    out_arr = np.zeros((B, P, D), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    yz_arr = np.empty((R * S, D), dtype=np.float64)
    cdef double[:, ::1] yz = yz_arr
    cdef Py_ssize_t b, p, r, s, d, m
    cdef double w
    cdef double *orow
    cdef double *yzrow
    with nogil:
        for b in range(B):
            for r in range(R):
                for s in range(S):
                    yzrow = &yz[r * S + s, 0]
                    for d in range(D):
                        yzrow[d] = y[b, r, d] * z[b, s, d]
            for p in range(P):
                orow = &out[b, p, 0]
                for r in range(R):
                    for s in range(S):
                        w = t[b, p, r, s]
                        yzrow = &yz[r * S + s, 0]
                        for d in range(D):
                            orow[d] += w * yzrow[d]
    return out_arr
