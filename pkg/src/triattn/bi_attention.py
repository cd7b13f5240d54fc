"""Standard query-key (Bi-)Attention with four similarity functions.

The public per-query functions take the column convention (``K`` is
``D x I``). ``bi_forward`` is the batched row-layout core used by the network:
``Q (B, N, D)``, ``K, V (B, I, D)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import ShapeError, as_matrix, as_vector


class BiVariant(enum.Enum):
    ADD = "add"
    DP = "dp"
    SDP = "sdp"
    BILI = "bili"


@dataclass
class BiParams:
    """Learnable similarity parameters.

    ``W`` and ``U`` are ``D' x D`` and ``p`` has length ``D'`` for ADD;
    only ``W`` (``D x D``) is used by BILI; DP and SDP need nothing.
    """

    W: np.ndarray | None = None
    U: np.ndarray | None = None
    p: np.ndarray | None = None

    def blocks(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in (("W", self.W), ("U", self.U), ("p", self.p)) if v is not None}


REQUIRED_BI_BLOCKS = {
    BiVariant.ADD: ("W", "U", "p"),
    BiVariant.DP: (),
    BiVariant.SDP: (),
    BiVariant.BILI: ("W",),
}


def init_bi_params(variant: BiVariant, D: int, rng: np.random.Generator,
                   hidden: int | None = None, scale: float | None = None,
                   zero_p: bool = True) -> BiParams:
    """Uniform(-1/sqrt(D), 1/sqrt(D)) matrices; ``p`` zero unless ``zero_p`` is False."""
    H = D if hidden is None else hidden
    a = 1.0 / np.sqrt(D) if scale is None else scale
    if variant is BiVariant.ADD:
        W = rng.uniform(-a, a, (H, D))
        U = rng.uniform(-a, a, (H, D))
        p = np.zeros(H) if zero_p else rng.uniform(-a, a, H)
        return BiParams(W=W, U=U, p=p)
    if variant is BiVariant.BILI:
        return BiParams(W=rng.uniform(-a, a, (D, D)))
    return BiParams()


def check_bi_params(variant: BiVariant, params: BiParams, D: int) -> None:
    for name in REQUIRED_BI_BLOCKS[variant]:
        if getattr(params, name) is None:
            raise ShapeError(f"{variant.name} needs parameter {name}")
    if variant is BiVariant.ADD:
        H = params.W.shape[0]
        if params.W.shape != (H, D) or params.U.shape != (H, D) or params.p.shape != (H,):
            raise ShapeError(
                f"ADD params: expected W, U of shape ({H}, {D}) and p of length {H}; got "
                f"{params.W.shape}, {params.U.shape}, {params.p.shape}"
            )
    elif variant is BiVariant.BILI and params.W.shape != (D, D):
        raise ShapeError(f"BILI W must be ({D}, {D}), got {params.W.shape}")


def softmax_normalize(scores) -> np.ndarray:
    """Numerically stable softmax of a score vector."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ShapeError(f"scores must be a vector, got shape {s.shape}")
    if s.size == 0:
        raise ValueError("softmax of an empty score vector")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    e = np.exp(s - s.max())
    return e / e.sum()


def softmax_last(S: np.ndarray) -> np.ndarray:
    e = np.exp(S - S.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# --- batched row-layout core -------------------------------------------------

def bi_scores_rows(variant: BiVariant, Q, K, params: BiParams):
    """Scores ``(B, N, I)`` plus whatever the backward pass needs."""
    D = Q.shape[-1]
    if variant is BiVariant.DP:
        return Q @ K.transpose(0, 2, 1), None
    if variant is BiVariant.SDP:
        return (Q @ K.transpose(0, 2, 1)) / np.sqrt(D), None
    if variant is BiVariant.BILI:
        return (Q @ params.W) @ K.transpose(0, 2, 1), None
    Zh = np.tanh((Q @ params.W.T)[:, :, None, :] + (K @ params.U.T)[:, None, :, :])
    return Zh @ params.p, Zh


@dataclass
class BiCache:
    variant: BiVariant
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    params: BiParams
    scores: np.ndarray
    weights: np.ndarray
    hidden: np.ndarray | None = field(default=None, repr=False)


def bi_forward(Q, K, V, variant: BiVariant, params: BiParams):
    """Batched Bi-Attention: returns ``out (B, N, D)`` and a cache for backprop."""
    S, hidden = bi_scores_rows(variant, Q, K, params)
    A = softmax_last(S)
    out = A @ V
    return out, BiCache(variant, Q, K, V, params, S, A, hidden)


# --- per-query API (column convention) --------------------------------------

def _check_qk(q, K, params, variant):
    q = as_vector(q, "q")
    K = as_matrix(K, "K")
    if K.shape[0] != q.shape[0]:
        raise ShapeError(f"K has {K.shape[0]} rows, query has length {q.shape[0]}")
    if K.shape[1] < 1:
        raise ShapeError("K needs at least one key column")
    check_bi_params(variant, params, q.shape[0])
    for name, arr in params.blocks().items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name} must be finite")
    return q, K


def bi_score(variant: BiVariant, q, K, params: BiParams) -> np.ndarray:
    """Similarity ``F(q, k_i)`` for each key column; length ``I``."""
    q, K = _check_qk(q, K, params, variant)
    S, _ = bi_scores_rows(variant, q[None, None, :], K.T[None], params)
    return S[0, 0]


def bi_attend(q, K, V, variant: BiVariant, params: BiParams) -> np.ndarray:
    """``V @ softmax(bi_score(...))``."""
    q, K = _check_qk(q, K, params, variant)
    V = as_matrix(V, "V")
    if V.shape != K.shape:
        raise ShapeError(f"V shape {V.shape} must match K shape {K.shape}")
    out, _ = bi_forward(q[None, None, :], K.T[None], V.T[None], variant, params)
    return out[0, 0]
