"""Brute-force scalar-loop references, independent of the package's vectorized paths."""

from __future__ import annotations

import math

import numpy as np


def n_mode_loop(X, Y, n):
    d = list(X.shape)
    out_shape = list(d)
    out_shape[n - 1] = Y.shape[0]
    Z = np.zeros(out_shape)
    for i1 in range(out_shape[0]):
        for i2 in range(out_shape[1]):
            for i3 in range(out_shape[2]):
                idx = [i1, i2, i3]
                acc = 0.0
                for k in range(d[n - 1]):
                    src = list(idx)
                    src[n - 1] = k
                    acc += X[tuple(src)] * Y[idx[n - 1], k]
                Z[i1, i2, i3] = acc
    return Z


def softmax_list(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def tri_score_loop(variant, q, K, C, params):
    """Score grid by explicit sums over the defining formulas; column convention."""
    D, I = K.shape
    J = C.shape[1]
    S = np.zeros((I, J))
    for i in range(I):
        for j in range(J):
            k, c = K[:, i], C[:, j]
            if variant == "tadd":
                W, U, H, p = params.W, params.U, params.H, params.p
                acc = 0.0
                for h in range(W.shape[0]):
                    pre = 0.0
                    for d in range(D):
                        pre += W[h, d] * q[d] + U[h, d] * k[d] + H[h, d] * c[d]
                    acc += p[h] * math.tanh(pre)
            elif variant in ("tdp", "tsdp"):
                acc = sum(q[d] * k[d] * c[d] for d in range(D))
                if variant == "tsdp":
                    acc /= math.sqrt(D)
            elif variant == "trili-full":
                Wt = params.Wt
                acc = 0.0
                for a in range(D):
                    for b in range(D):
                        for e in range(D):
                            acc += Wt[a, b, e] * q[a] * k[b] * c[e]
            elif variant == "trili-econ":
                wq = [sum(params.W[r, d] * q[d] for d in range(D)) for r in range(D)]
                uk = [sum(params.U[r, d] * k[d] for d in range(D)) for r in range(D)]
                hc = [sum(params.H[r, d] * c[d] for d in range(D)) for r in range(D)]
                acc = sum(wq[r] * uk[r] * hc[r] for r in range(D))
            else:
                raise ValueError(variant)
            S[i, j] = acc
    return S


def fiber_loop(integration, v, c, params):
    D = len(v)
    if integration == "add":
        return [v[d] + c[d] for d in range(D)]
    if integration == "mul":
        return [v[d] * c[d] for d in range(D)]
    uv = [sum(params.U2[r, d] * v[d] for d in range(D)) for r in range(D)]
    hc = [sum(params.H2[r, d] * c[d] for d in range(D)) for r in range(D)]
    return [uv[r] * hc[r] for r in range(D)]


def tri_attend_loop(variant, integration, q, K, V, C, params):
    """Double-sum form of the contextual attention embedding."""
    S = tri_score_loop(variant, q, K, C, params)
    I, J = S.shape
    w = softmax_list([S[i, j] for i in range(I) for j in range(J)])
    D = len(q)
    out = [0.0] * D
    for i in range(I):
        for j in range(J):
            f = fiber_loop(integration, V[:, i], C[:, j], params)
            a = w[i * J + j]
            for d in range(D):
                out[d] += a * f[d]
    return np.array(out)


def bi_attend_loop(variant, q, K, V, params):
    D, I = K.shape
    scores = []
    for i in range(I):
        k = K[:, i]
        if variant == "dp":
            s = sum(q[d] * k[d] for d in range(D))
        elif variant == "sdp":
            s = sum(q[d] * k[d] for d in range(D)) / math.sqrt(D)
        elif variant == "bili":
            s = sum(q[a] * params.W[a, b] * k[b] for a in range(D) for b in range(D))
        else:
            s = sum(params.p[h] * math.tanh(sum(params.W[h, d] * q[d] + params.U[h, d] * k[d]
                                                for d in range(D)))
                    for h in range(params.W.shape[0]))
        scores.append(s)
    w = softmax_list(scores)
    return np.array([sum(w[i] * V[d, i] for i in range(I)) for d in range(D)])
