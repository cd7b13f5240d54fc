"""Query-key-context (Tri-)Attention.

Per query ``q`` the mechanism scores every (key, context) pair, normalizes
the ``I x J`` grid with one joint softmax, fuses values with context and
returns the weighted sum of the fused fibers.

Public per-query functions use the column convention (``K`` is ``D x I``,
``C`` is ``D x J``). ``tri_forward`` is the batched row-layout core used by
the network and the backward pass: ``Q (B, N, D)``, ``K, V (B, I, D)``,
``C (B, J, D)``, grids ``(B, N, I, J)``.

Grid cells are flattened as ``m = i * J + j`` everywhere, matching
:func:`triattn.tensor_core.mode3_matricize`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .tensor_core import CapacityError, ShapeError, as_matrix, as_vector

TRILI_FULL_MAX_DIM = 32


class TriVariant(enum.Enum):
    TADD = "tadd"
    TDP = "tdp"
    TSDP = "tsdp"
    TRILI_FULL = "trili-full"
    TRILI_ECON = "trili-econ"


class ValueIntegration(enum.Enum):
    ADDITIVE = "add"
    MULTIPLICATIVE = "mul"
    BILINEAR = "bili"


DEFAULT_INTEGRATION = {
    TriVariant.TADD: ValueIntegration.ADDITIVE,
    TriVariant.TDP: ValueIntegration.MULTIPLICATIVE,
    TriVariant.TSDP: ValueIntegration.MULTIPLICATIVE,
    TriVariant.TRILI_FULL: ValueIntegration.BILINEAR,
    TriVariant.TRILI_ECON: ValueIntegration.BILINEAR,
}


@dataclass
class TriParams:
    """Learnable parameters; only the blocks a configuration uses are set.

    ``W, U, H`` (``D' x D``) and ``p`` (``D'``) serve TADD; ``W, U, H``
    (``D x D``) serve TRILI_ECON; ``Wt`` (``D x D x D``) serves TRILI_FULL;
    ``U2, H2`` (``D x D``) are the bilinear value-integration maps.
    """

    W: np.ndarray | None = None
    U: np.ndarray | None = None
    H: np.ndarray | None = None
    p: np.ndarray | None = None
    Wt: np.ndarray | None = None
    U2: np.ndarray | None = None
    H2: np.ndarray | None = None

    BLOCK_NAMES = ("W", "U", "H", "p", "Wt", "U2", "H2")

    def blocks(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.BLOCK_NAMES if getattr(self, n) is not None}


SCORE_BLOCKS = {
    TriVariant.TADD: ("W", "U", "H", "p"),
    TriVariant.TDP: (),
    TriVariant.TSDP: (),
    TriVariant.TRILI_FULL: ("Wt",),
    TriVariant.TRILI_ECON: ("W", "U", "H"),
}
VALUE_BLOCKS = {
    ValueIntegration.ADDITIVE: (),
    ValueIntegration.MULTIPLICATIVE: (),
    ValueIntegration.BILINEAR: ("U2", "H2"),
}


def required_blocks(variant: TriVariant, integration: ValueIntegration) -> tuple[str, ...]:
    return SCORE_BLOCKS[variant] + VALUE_BLOCKS[integration]


def init_tri_params(variant: TriVariant, integration: ValueIntegration, D: int,
                    rng: np.random.Generator, hidden: int | None = None,
                    scale: float | None = None, zero_p: bool = True) -> TriParams:
    """Uniform(-1/sqrt(D), 1/sqrt(D)) for matrices and ``Wt``; ``p`` zero by default."""
    if variant is TriVariant.TRILI_FULL and D > TRILI_FULL_MAX_DIM:
        raise CapacityError(f"full trilinear tensor capped at D={TRILI_FULL_MAX_DIM}, got {D}")
    Hd = D if hidden is None else hidden
    a = 1.0 / np.sqrt(D) if scale is None else scale
    params = TriParams()
    if variant is TriVariant.TADD:
        params.W = rng.uniform(-a, a, (Hd, D))
        params.U = rng.uniform(-a, a, (Hd, D))
        params.H = rng.uniform(-a, a, (Hd, D))
        params.p = np.zeros(Hd) if zero_p else rng.uniform(-a, a, Hd)
    elif variant is TriVariant.TRILI_ECON:
        params.W = rng.uniform(-a, a, (D, D))
        params.U = rng.uniform(-a, a, (D, D))
        params.H = rng.uniform(-a, a, (D, D))
    elif variant is TriVariant.TRILI_FULL:
        params.Wt = rng.uniform(-a, a, (D, D, D))
    if integration is ValueIntegration.BILINEAR:
        params.U2 = rng.uniform(-a, a, (D, D))
        params.H2 = rng.uniform(-a, a, (D, D))
    return params


def check_tri_params(variant: TriVariant, integration: ValueIntegration | None,
                     params: TriParams, D: int) -> None:
    names = SCORE_BLOCKS[variant] + (VALUE_BLOCKS[integration] if integration else ())
    for name in names:
        arr = getattr(params, name)
        if arr is None:
            raise ShapeError(f"{variant.name}/{integration.name if integration else '-'} "
                             f"needs parameter {name}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name} must be finite")
    if variant is TriVariant.TRILI_FULL:
        if D > TRILI_FULL_MAX_DIM:
            raise CapacityError(f"full trilinear tensor capped at D={TRILI_FULL_MAX_DIM}, got {D}")
        if params.Wt.shape != (D, D, D):
            raise ShapeError(f"Wt must be ({D}, {D}, {D}), got {params.Wt.shape}")
    elif variant is TriVariant.TADD:
        Hd = params.W.shape[0]
        for name in ("W", "U", "H"):
            if getattr(params, name).shape != (Hd, D):
                raise ShapeError(f"TADD {name} must be ({Hd}, {D}), got {getattr(params, name).shape}")
        if params.p.shape != (Hd,):
            raise ShapeError(f"TADD p must have length {Hd}, got {params.p.shape}")
    elif variant is TriVariant.TRILI_ECON:
        for name in ("W", "U", "H"):
            if getattr(params, name).shape != (D, D):
                raise ShapeError(f"TRILI_ECON {name} must be ({D}, {D}), got {getattr(params, name).shape}")
    if integration is ValueIntegration.BILINEAR:
        for name in ("U2", "H2"):
            if getattr(params, name).shape != (D, D):
                raise ShapeError(f"bilinear integration {name} must be ({D}, {D})")


# --- batched row-layout core -------------------------------------------------

def tri_scores_rows(variant: TriVariant, Q, K, C, params: TriParams):
    """Score grids ``(B, N, I, J)`` and the intermediates backprop reuses."""
    D = Q.shape[-1]
    if variant is TriVariant.TDP:
        return kernels.trilinear_scores(Q, K, C), None
    if variant is TriVariant.TSDP:
        return kernels.trilinear_scores(Q, K, C) / np.sqrt(D), None
    if variant is TriVariant.TRILI_ECON:
        proj = (Q @ params.W.T, K @ params.U.T, C @ params.H.T)
        return kernels.trilinear_scores(*proj), proj
    if variant is TriVariant.TADD:
        proj = (Q @ params.W.T, K @ params.U.T, C @ params.H.T)
        return kernels.additive_scores(*proj, params.p), proj
    if D > TRILI_FULL_MAX_DIM:
        raise CapacityError(f"full trilinear tensor capped at D={TRILI_FULL_MAX_DIM}, got {D}")
    # T[b,n,e,f] = sum_d Wt[d,e,f] q_d ; S = K T C^T per query
    T = np.einsum("def,bnd->bnef", params.Wt, Q)
    TC = T @ C[:, None].transpose(0, 1, 3, 2)  # (B, N, D, J)
    return K[:, None] @ TC, (T, TC)


def grid_softmax(S: np.ndarray) -> np.ndarray:
    """Joint softmax over the trailing ``I x J`` axes."""
    shape = S.shape
    flat = S.reshape(shape[:-2] + (shape[-2] * shape[-1],))
    e = np.exp(flat - flat.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).reshape(shape)


def value_parts(integration: ValueIntegration, V, C, params: TriParams):
    """The two factors whose fibers are fused: ``(V, C)`` or their projections."""
    if integration is ValueIntegration.BILINEAR:
        return V @ params.U2.T, C @ params.H2.T
    return V, C


def combine_rows(integration: ValueIntegration, A, Vf, Cf):
    """``out[b, n] = sum_ij A[b, n, i, j] * fiber(i, j)`` without building the fibers."""
    if integration is ValueIntegration.ADDITIVE:
        return A.sum(axis=3) @ Vf + A.sum(axis=2) @ Cf
    return kernels.trilinear_combine(A, Vf, Cf)


def contextual_value_rows(integration: ValueIntegration, V, C, params: TriParams):
    """Fused fibers ``(B, I, J, D)``."""
    Vf, Cf = value_parts(integration, V, C, params)
    if integration is ValueIntegration.ADDITIVE:
        return Vf[:, :, None, :] + Cf[:, None, :, :]
    return Vf[:, :, None, :] * Cf[:, None, :, :]


@dataclass
class TriCache:
    variant: TriVariant
    integration: ValueIntegration
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    C: np.ndarray
    params: TriParams
    scores: np.ndarray
    weights: np.ndarray
    Vf: np.ndarray
    Cf: np.ndarray
    score_aux: object = field(default=None, repr=False)


def tri_forward(Q, K, V, C, variant: TriVariant, integration: ValueIntegration,
                params: TriParams):
    """Batched Tri-Attention: ``out (B, N, D)`` and a cache for backprop."""
    S, aux = tri_scores_rows(variant, Q, K, C, params)
    A = grid_softmax(S)
    Vf, Cf = value_parts(integration, V, C, params)
    out = combine_rows(integration, A, Vf, Cf)
    return out, TriCache(variant, integration, Q, K, V, C, params, S, A, Vf, Cf, aux)


# --- per-query API (column convention) --------------------------------------

def _check_inputs(q, K, C, V=None):
    q = as_vector(q, "q")
    K = as_matrix(K, "K")
    C = as_matrix(C, "C")
    D = q.shape[0]
    if K.shape[0] != D or C.shape[0] != D:
        raise ShapeError(f"q, K, C must share dimension D={D}; got K {K.shape}, C {C.shape}")
    if K.shape[1] < 1 or C.shape[1] < 1:
        raise ShapeError("K and C need at least one column each")
    if V is not None:
        V = as_matrix(V, "V")
        if V.shape != K.shape:
            raise ShapeError(f"V shape {V.shape} must match K shape {K.shape}")
    return q, K, C, V


def tri_score(variant: TriVariant, q, K, C, params: TriParams) -> np.ndarray:
    """Score grid ``F(q, k_i, c_j)`` of shape ``I x J``."""
    q, K, C, _ = _check_inputs(q, K, C)
    check_tri_params(variant, None, params, q.shape[0])
    S, _ = tri_scores_rows(variant, q[None, None, :], K.T[None], C.T[None], params)
    return S[0, 0]


def tri_score_batched(Q, K, C, params: TriParams, variant: TriVariant) -> np.ndarray:
    """Scores for every query column of ``Q``: shape ``N x I x J``."""
    Q = as_matrix(Q, "Q")
    K = as_matrix(K, "K")
    C = as_matrix(C, "C")
    D = Q.shape[0]
    if K.shape[0] != D or C.shape[0] != D:
        raise ShapeError(f"Q, K, C must share row count D={D}; got K {K.shape}, C {C.shape}")
    check_tri_params(variant, None, params, D)
    S, _ = tri_scores_rows(variant, Q.T[None], K.T[None], C.T[None], params)
    return S[0]


def tri_normalize(grid) -> np.ndarray:
    """Joint softmax of an ``I x J`` grid; all cells sum to one."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeError(f"score grid must be 2-D, got shape {g.shape}")
    if g.size == 0:
        raise ValueError("cannot normalize an empty score grid")
    if not np.all(np.isfinite(g)):
        raise ValueError("score grid must be finite")
    return grid_softmax(g)


def contextual_value(integration: ValueIntegration, V, C, params: TriParams) -> np.ndarray:
    """Fused value tensor of shape ``I x J x D``."""
    V = as_matrix(V, "V")
    C = as_matrix(C, "C")
    if V.shape[0] != C.shape[0]:
        raise ShapeError(f"V and C must share row count; got {V.shape[0]} and {C.shape[0]}")
    D = V.shape[0]
    for name in VALUE_BLOCKS[integration]:
        arr = getattr(params, name)
        if arr is None or arr.shape != (D, D):
            raise ShapeError(f"{integration.name} integration needs {name} of shape ({D}, {D})")
    return contextual_value_rows(integration, V.T[None], C.T[None], params)[0]


def tri_attend(q, K, V, C, variant: TriVariant, integration: ValueIntegration,
               params: TriParams) -> np.ndarray:
    """Contextual attention embedding of one query, a vector in ``R^D``."""
    q, K, C, V = _check_inputs(q, K, C, V)
    check_tri_params(variant, integration, params, q.shape[0])
    out, _ = tri_forward(q[None, None, :], K.T[None], V.T[None], C.T[None],
                         variant, integration, params)
    return out[0, 0]


def tri_attend_trace(q, K, V, C, variant: TriVariant, integration: ValueIntegration,
                     params: TriParams) -> dict[str, np.ndarray]:
    """Intermediate values of one query's computation (grid, weights, fibers, output)."""
    q, K, C, V = _check_inputs(q, K, C, V)
    check_tri_params(variant, integration, params, q.shape[0])
    out, cache = tri_forward(q[None, None, :], K.T[None], V.T[None], C.T[None],
                             variant, integration, params)
    return {
        "scores": cache.scores[0, 0],
        "weights": cache.weights[0, 0],
        "values": contextual_value_rows(integration, cache.V, cache.C, params)[0],
        "embedding": out[0, 0],
    }
