"""Analytic backward passes and a finite-difference checker.

``tri_backward`` / ``bi_backward`` operate on the batched row-layout caches
produced by the forward cores and are what training uses. The per-query
``*_attend_backward`` functions wrap them in the column convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .bi_attention import BiCache, BiParams, BiVariant, bi_forward, check_bi_params
from .tensor_core import NumericalError, ShapeError
from .tri_attention import (
    TriCache,
    TriParams,
    TriVariant,
    ValueIntegration,
    check_tri_params,
    tri_forward,
)

GRADCHECK_STEP = 1e-5
GRADCHECK_THRESHOLD = 1e-4
_REL_FLOOR = 1e-8


@dataclass
class RowGrads:
    """Row-layout adjoints of one batched attention call."""

    dQ: np.ndarray
    dK: np.ndarray
    dV: np.ndarray
    dC: np.ndarray | None
    dparams: dict[str, np.ndarray]


@dataclass
class Adjoints:
    """Column-convention adjoints of one query's attention call."""

    d_q: np.ndarray
    d_K: np.ndarray
    d_V: np.ndarray
    d_C: np.ndarray | None
    d_params: dict[str, np.ndarray] = field(default_factory=dict)


def _softmax_backward(A, dA, axes):
    return A * (dA - np.sum(A * dA, axis=axes, keepdims=True))


def _trilinear_backward(dS, X, Y, Z):
    """Adjoints of ``S[b,p,r,s] = sum_d X[b,p,d] Y[b,r,d] Z[b,s,d]``."""
    dX = kernels.trilinear_combine(dS, Y, Z)
    dY = kernels.trilinear_combine(dS.transpose(0, 2, 1, 3), X, Z)
    dZ = kernels.trilinear_combine(dS.transpose(0, 3, 1, 2), X, Y)
    return dX, dY, dZ


def _project_back(dproj, x, M):
    """For ``y = x @ M.T``: returns ``(dx, dM)``."""
    return dproj @ M, np.einsum("bnh,bnd->hd", dproj, x)


def tri_backward(cache: TriCache, d_out) -> RowGrads:
    """Backprop ``sum(d_out * out)`` through :func:`triattn.tri_attention.tri_forward`."""
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != cache.Q.shape:
        raise ShapeError(f"upstream gradient shape {d_out.shape} != output shape {cache.Q.shape}")
    A, Vf, Cf = cache.weights, cache.Vf, cache.Cf
    params = cache.params
    dparams: dict[str, np.ndarray] = {}

    # value path
    if cache.integration is ValueIntegration.ADDITIVE:
        dA = (d_out @ Vf.transpose(0, 2, 1))[:, :, :, None] + (d_out @ Cf.transpose(0, 2, 1))[:, :, None, :]
        dVf = A.sum(axis=3).transpose(0, 2, 1) @ d_out
        dCf = A.sum(axis=2).transpose(0, 2, 1) @ d_out
    else:
        dA = kernels.trilinear_scores(d_out, Vf, Cf)
        dVf = kernels.trilinear_combine(A.transpose(0, 2, 1, 3), d_out, Cf)
        dCf = kernels.trilinear_combine(A.transpose(0, 3, 1, 2), d_out, Vf)
    if cache.integration is ValueIntegration.BILINEAR:
        dV, dparams["U2"] = _project_back(dVf, cache.V, params.U2)
        dC, dparams["H2"] = _project_back(dCf, cache.C, params.H2)
    else:
        dV, dC = dVf, dCf

    dS = _softmax_backward(A, dA, axes=(2, 3))

    # score path
    Q, K, C = cache.Q, cache.K, cache.C
    v = cache.variant
    if v is TriVariant.TDP or v is TriVariant.TSDP:
        if v is TriVariant.TSDP:
            dS = dS / math.sqrt(Q.shape[-1])
        dQ, dK, dCs = _trilinear_backward(dS, Q, K, C)
    elif v is TriVariant.TRILI_ECON or v is TriVariant.TADD:
        Qp, Kp, Cp = cache.score_aux
        if v is TriVariant.TRILI_ECON:
            dQp, dKp, dCp = _trilinear_backward(dS, Qp, Kp, Cp)
        else:
            dQp, dKp, dCp, dparams["p"] = kernels.additive_scores_backward(dS, Qp, Kp, Cp, params.p)
        dQ, dparams["W"] = _project_back(dQp, Q, params.W)
        dK, dparams["U"] = _project_back(dKp, K, params.U)
        dCs, dparams["H"] = _project_back(dCp, C, params.H)
    else:
        T, TC = cache.score_aux
        dTC = K[:, None].transpose(0, 1, 3, 2) @ dS
        dK = np.einsum("bnij,bnej->bie", dS, TC)
        dT = dTC @ C[:, None]
        dCs = np.einsum("bnej,bnef->bjf", dTC, T)
        dparams["Wt"] = np.einsum("bnd,bnef->def", Q, dT)
        dQ = np.einsum("def,bnef->bnd", params.Wt, dT)

    return RowGrads(dQ=dQ, dK=dK, dV=dV, dC=dC + dCs, dparams=dparams)


def bi_backward(cache: BiCache, d_out) -> RowGrads:
    """Backprop ``sum(d_out * out)`` through :func:`triattn.bi_attention.bi_forward`."""
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != cache.Q.shape:
        raise ShapeError(f"upstream gradient shape {d_out.shape} != output shape {cache.Q.shape}")
    A, Q, K, V, params = cache.weights, cache.Q, cache.K, cache.V, cache.params
    dV = A.transpose(0, 2, 1) @ d_out
    dS = _softmax_backward(A, d_out @ V.transpose(0, 2, 1), axes=(2,))
    dparams: dict[str, np.ndarray] = {}
    v = cache.variant
    if v is BiVariant.SDP:
        dS = dS / math.sqrt(Q.shape[-1])
    if v is BiVariant.DP or v is BiVariant.SDP:
        dQ = dS @ K
        dK = dS.transpose(0, 2, 1) @ Q
    elif v is BiVariant.BILI:
        dQ = dS @ K @ params.W.T
        dK = dS.transpose(0, 2, 1) @ Q @ params.W
        dparams["W"] = np.einsum("bnd,bni,bie->de", Q, dS, K)
    else:
        Zh = cache.hidden
        dparams["p"] = np.einsum("bnih,bni->h", Zh, dS)
        dpre = (dS[..., None] * params.p) * (1.0 - Zh * Zh)
        dQ, dparams["W"] = _project_back(dpre.sum(axis=2), Q, params.W)
        dK, dparams["U"] = _project_back(dpre.sum(axis=1), K, params.U)
    return RowGrads(dQ=dQ, dK=dK, dV=dV, dC=None, dparams=dparams)


def tri_attend_backward(q, K, V, C, variant: TriVariant, integration: ValueIntegration,
                        params: TriParams, upstream) -> Adjoints:
    """Gradients of ``upstream . tri_attend(q, K, V, C, ...)`` w.r.t. every input."""
    q = np.asarray(q, dtype=np.float64)
    K, V, C = (np.asarray(x, dtype=np.float64) for x in (K, V, C))
    upstream = np.asarray(upstream, dtype=np.float64)
    D = q.shape[0]
    if upstream.shape != (D,):
        raise ShapeError(f"upstream must have length {D}, got shape {upstream.shape}")
    if K.shape[0] != D or C.shape[0] != D or V.shape != K.shape:
        raise ShapeError("inconsistent q, K, V, C shapes")
    check_tri_params(variant, integration, params, D)
    _, cache = tri_forward(q[None, None], K.T[None], V.T[None], C.T[None], variant, integration, params)
    g = tri_backward(cache, upstream[None, None])
    return Adjoints(g.dQ[0, 0], g.dK[0].T, g.dV[0].T, g.dC[0].T, g.dparams)


def bi_attend_backward(q, K, V, variant: BiVariant, params: BiParams, upstream) -> Adjoints:
    """Gradients of ``upstream . bi_attend(q, K, V, ...)``."""
    q = np.asarray(q, dtype=np.float64)
    K, V = np.asarray(K, dtype=np.float64), np.asarray(V, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    D = q.shape[0]
    if upstream.shape != (D,):
        raise ShapeError(f"upstream must have length {D}, got shape {upstream.shape}")
    if K.shape[0] != D or V.shape != K.shape:
        raise ShapeError("inconsistent q, K, V shapes")
    check_bi_params(variant, params, D)
    _, cache = bi_forward(q[None, None], K.T[None], V.T[None], variant, params)
    g = bi_backward(cache, upstream[None, None])
    return Adjoints(g.dQ[0, 0], g.dK[0].T, g.dV[0].T, None, g.dparams)


# --- finite differences ------------------------------------------------------

def fd_gradient(f: Callable[[np.ndarray], float], theta, h: float = GRADCHECK_STEP) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at flat ``theta``."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    theta = np.array(theta, dtype=np.float64).ravel()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        fp = float(f(theta.copy()))
        theta[i] = old - h
        fm = float(f(theta.copy()))
        theta[i] = old
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericalError(f"non-finite function value while perturbing coordinate {i}: "
                                 f"f(+h)={fp}, f(-h)={fm}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), _REL_FLOOR)
    return float(np.max(np.abs(a - b) / denom))


def numeric_block_gradients(loss: Callable[[dict[str, np.ndarray]], float],
                            blocks: dict[str, np.ndarray], h: float) -> dict[str, np.ndarray]:
    """FD gradient of ``loss(blocks)`` w.r.t. each named array, one block at a time."""
    out = {}
    for name, value in blocks.items():
        def f(flat, name=name, shape=value.shape):
            trial = dict(blocks)
            trial[name] = flat.reshape(shape)
            return loss(trial)
        out[name] = fd_gradient(f, value, h).reshape(value.shape)
    return out


@dataclass
class GradcheckReport:
    variant: str
    integration: str | None
    dims: dict[str, int]
    seed: int
    block_errors: dict[str, float]
    threshold: float
    step: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _random_tri_problem(variant, integration, dims, seed):
    rng = np.random.default_rng(seed)
    D, I, J = dims["D"], dims["I"], dims["J"]
    normal = lambda *shape: rng.normal(0.0, 0.5, shape)
    data = {"q": normal(D), "K": normal(D, I), "V": normal(D, I), "C": normal(D, J)}
    params = {}
    if variant is TriVariant.TADD:
        params = {"W": normal(D, D), "U": normal(D, D), "H": normal(D, D), "p": normal(D)}
    elif variant is TriVariant.TRILI_ECON:
        params = {"W": normal(D, D), "U": normal(D, D), "H": normal(D, D)}
    elif variant is TriVariant.TRILI_FULL:
        params = {"Wt": normal(D, D, D)}
    if integration is ValueIntegration.BILINEAR:
        params.update(U2=normal(D, D), H2=normal(D, D))
    return data, params, normal(D)


def _finish_report(variant, integration, dims, seed, analytic, numeric, fault, threshold, h):
    if fault is not None:
        block, delta = fault
        analytic[block] = analytic[block].copy()
        analytic[block].flat[0] += delta
    errors = {name: max_relative_error(analytic[name], numeric[name]) for name in numeric}
    return GradcheckReport(
        variant=variant.value,
        integration=integration.value if integration is not None else None,
        dims=dict(dims),
        seed=seed,
        block_errors=errors,
        threshold=threshold,
        step=h,
        passed=all(e < threshold for e in errors.values()),
    )


def gradcheck_report(variant: TriVariant, integration: ValueIntegration,
                     dims: dict[str, int] | None = None, seed: int = 0,
                     h: float = GRADCHECK_STEP, threshold: float = GRADCHECK_THRESHOLD,
                     fault: tuple[str, float] | None = None) -> GradcheckReport:
    """Compare analytic Tri-Attention gradients with central differences.

    Inputs and parameters are drawn from N(0, 0.5^2); the loss is
    ``u . tri_attend(...)`` for a random upstream vector ``u``. ``fault``
    adds ``delta`` to the first entry of the named analytic block, which must
    make the report fail.
    """
    dims = dims or {"D": 5, "I": 3, "J": 2}
    if dims["D"] > 8 or dims["I"] > 5 or dims["J"] > 5:
        raise ValueError(f"gradcheck dims must satisfy D <= 8, I, J <= 5; got {dims}")
    data, pvals, upstream = _random_tri_problem(variant, integration, dims, seed)

    def loss(blocks):
        params = TriParams(**{k: blocks[k] for k in pvals})
        q, K, V, C = (blocks[k] for k in ("q", "K", "V", "C"))
        out, _ = tri_forward(q[None, None], K.T[None], V.T[None], C.T[None], variant, integration, params)
        return float(upstream @ out[0, 0])

    blocks = {**data, **pvals}
    numeric = numeric_block_gradients(loss, blocks, h)
    adj = tri_attend_backward(data["q"], data["K"], data["V"], data["C"], variant, integration,
                              TriParams(**pvals), upstream)
    analytic = {"q": adj.d_q, "K": adj.d_K, "V": adj.d_V, "C": adj.d_C, **adj.d_params}
    return _finish_report(variant, integration, dims, seed, analytic, numeric, fault, threshold, h)


def bi_gradcheck_report(variant: BiVariant, dims: dict[str, int] | None = None, seed: int = 0,
                        h: float = GRADCHECK_STEP, threshold: float = GRADCHECK_THRESHOLD,
                        fault: tuple[str, float] | None = None) -> GradcheckReport:
    """Bi-Attention counterpart of :func:`gradcheck_report` (``J`` is ignored)."""
    dims = dims or {"D": 5, "I": 3}
    rng = np.random.default_rng(seed)
    D, I = dims["D"], dims["I"]
    normal = lambda *shape: rng.normal(0.0, 0.5, shape)
    data = {"q": normal(D), "K": normal(D, I), "V": normal(D, I)}
    pvals = {}
    if variant is BiVariant.ADD:
        pvals = {"W": normal(D, D), "U": normal(D, D), "p": normal(D)}
    elif variant is BiVariant.BILI:
        pvals = {"W": normal(D, D)}
    upstream = normal(D)

    def loss(blocks):
        params = BiParams(**{k: blocks[k] for k in pvals})
        q, K, V = blocks["q"], blocks["K"], blocks["V"]
        out, _ = bi_forward(q[None, None], K.T[None], V.T[None], variant, params)
        return float(upstream @ out[0, 0])

    numeric = numeric_block_gradients(loss, {**data, **pvals}, h)
    adj = bi_attend_backward(data["q"], data["K"], data["V"], variant, BiParams(**pvals), upstream)
    analytic = {"q": adj.d_q, "K": adj.d_K, "V": adj.d_V, **adj.d_params}
    return _finish_report(variant, None, dims, seed, analytic, numeric, fault, threshold, h)
