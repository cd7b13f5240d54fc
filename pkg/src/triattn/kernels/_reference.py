"""Pure-numpy kernels, used when the compiled extension is unavailable.

All arrays are float64 in row layout with a leading batch axis:
``X (B, P, D)``, ``Y (B, R, D)``, ``Z (B, S, D)``, grids ``(B, P, R, S)``.
"""

from __future__ import annotations

import numpy as np


def _outer_fibers(Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    # (B, R*S, D) with row r*S + s equal to Y[b, r] * Z[b, s]
    B, R, D = Y.shape
    S = Z.shape[1]
    return (Y[:, :, None, :] * Z[:, None, :, :]).reshape(B, R * S, D)


def trilinear_scores(X, Y, Z):
    """``out[b, p, r, s] = sum_d X[b, p, d] * Y[b, r, d] * Z[b, s, d]``."""
    B, P, _ = X.shape
    R, S = Y.shape[1], Z.shape[1]
    yz = _outer_fibers(Y, Z)
    return np.matmul(X, yz.transpose(0, 2, 1)).reshape(B, P, R, S)


def trilinear_combine(T, Y, Z):
    """``out[b, p, d] = sum_{r, s} T[b, p, r, s] * Y[b, r, d] * Z[b, s, d]``."""
    B, P, R, S = T.shape
    return np.matmul(T.reshape(B, P, R * S), _outer_fibers(Y, Z))


def _additive_hidden(A, Bk, G):
    return np.tanh(A[:, :, None, None, :] + Bk[:, None, :, None, :] + G[:, None, None, :, :])


def additive_scores(A, Bk, G, p):
    """``out[b, p, r, s] = sum_h p[h] * tanh(A[b, p, h] + Bk[b, r, h] + G[b, s, h])``."""
    return _additive_hidden(A, Bk, G) @ p


def additive_scores_backward(dS, A, Bk, G, p):
    """Adjoints of :func:`additive_scores` w.r.t. ``A, Bk, G, p``."""
    Zh = _additive_hidden(A, Bk, G)
    dp = np.einsum("bprsh,bprs->h", Zh, dS)
    dpre = (dS[..., None] * p) * (1.0 - Zh * Zh)
    return dpre.sum(axis=(2, 3)), dpre.sum(axis=(1, 3)), dpre.sum(axis=(1, 2)), dp
