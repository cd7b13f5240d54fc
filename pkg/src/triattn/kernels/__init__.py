"""Hot contraction kernels behind a backend switch.

The compiled extensions (``_ckernels`` for the trilinear contractions,
``_cadditive`` for the tanh grids) are used when they import; otherwise the
numpy implementation in ``_reference`` is used. Set ``TRIATTN_KERNELS=python``
to force the fallback. Both backends expose the same four functions and take
float64 arrays in row layout with a leading batch axis.
"""

from __future__ import annotations

import importlib
import os
from types import ModuleType, SimpleNamespace

import numpy as np

from . import _reference

_NAMES = ("trilinear_scores", "trilinear_combine", "additive_scores", "additive_scores_backward")


def _load_compiled() -> SimpleNamespace | None:
    try:
        tri = importlib.import_module("triattn.kernels._ckernels")
        add = importlib.import_module("triattn.kernels._cadditive")
    except ImportError:
        return None
    return SimpleNamespace(
        __name__="compiled",
        trilinear_scores=tri.trilinear_scores,
        trilinear_combine=tri.trilinear_combine,
        additive_scores=add.additive_scores,
        additive_scores_backward=add.additive_scores_backward,
    )


_compiled = _load_compiled()


def available_backends() -> list[str]:
    return ["python"] + (["compiled"] if _compiled is not None else [])


def get_backend(name: str) -> ModuleType | SimpleNamespace:
    if name == "python":
        return _reference
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def _select() -> str:
    requested = os.environ.get("TRIATTN_KERNELS", "").strip().lower()
    if requested == "python" or _compiled is None:
        return "python"
    return "compiled"


BACKEND = _select()
_impl = get_backend(BACKEND)


def _f64(*arrays):
    return [np.asarray(a, dtype=np.float64) for a in arrays]


def trilinear_scores(X, Y, Z):
    return _impl.trilinear_scores(*_f64(X, Y, Z))


def trilinear_combine(T, Y, Z):
    return _impl.trilinear_combine(*_f64(T, Y, Z))


def additive_scores(A, Bk, G, p):
    return _impl.additive_scores(*_f64(A, Bk, G, p))


def additive_scores_backward(dS, A, Bk, G, p):
    return _impl.additive_scores_backward(*_f64(dS, A, Bk, G, p))


__all__ = ["BACKEND", "available_backends", "get_backend", *_NAMES]
