"""Dense matrix / order-3 tensor algebra.

Vectors, matrices and order-3 tensors are plain ``numpy.ndarray`` values of
rank 1, 2 and 3. Storage is row-major (C order): entry ``(i, j, k)`` of a
``d1 x d2 x d3`` tensor lives at flat offset ``(i * d2 + j) * d3 + k``.

Matrices follow the column convention used throughout the package: a set of
``I`` vectors in ``R^D`` is a ``D x I`` matrix whose columns are the vectors.

Mode indices are 1-based (``n in {1, 2, 3}``).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "CapacityError",
    "NumericalError",
    "as_vector",
    "as_matrix",
    "as_tensor3",
    "n_mode_product_matrix",
    "n_mode_product_vector",
    "contextual_inner_product",
    "identity_tensor",
    "mode3_matricize",
    "mode3_fold",
    "hadamard",
]


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class CapacityError(ValueError):
    """Requested object exceeds a documented size cap."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value."""


def _as_array(x, ndim: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{name}: expected rank {ndim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: entries must be finite")
    return arr


def as_vector(x, name: str = "vector") -> np.ndarray:
    return _as_array(x, 1, name)


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    return _as_array(x, 2, name)


def as_tensor3(x, name: str = "tensor") -> np.ndarray:
    return _as_array(x, 3, name)


def _check_mode(n: int) -> int:
    if n not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {n!r}")
    return n - 1


def n_mode_product_matrix(X, Y, n: int) -> np.ndarray:
    """n-mode product ``X x_n Y``.

    ``Y`` has shape ``(J, X.shape[n-1])``; the result replaces dimension ``n``
    of ``X`` by ``J``::

        Z[.., j, ..] = sum_k X[.., k, ..] * Y[j, k]
    """
    X = as_tensor3(X, "X")
    Y = as_matrix(Y, "Y")
    axis = _check_mode(n)
    if Y.shape[1] != X.shape[axis]:
        raise ShapeError(
            f"mode-{n} product: Y must have {X.shape[axis]} columns "
            f"(size of mode {n}), got {Y.shape[1]}"
        )
    Z = np.tensordot(Y, X, axes=(1, axis))  # contracted mode lands first
    return np.moveaxis(Z, 0, axis)


def n_mode_product_vector(X, y, n: int) -> np.ndarray:
    """n-mode product ``X x_n y^T``; mode ``n`` is kept with size 1."""
    X = as_tensor3(X, "X")
    y = as_vector(y, "y")
    axis = _check_mode(n)
    if y.shape[0] != X.shape[axis]:
        raise ShapeError(
            f"mode-{n} product: y must have length {X.shape[axis]}, got {y.shape[0]}"
        )
    return n_mode_product_matrix(X, y[None, :], n)


def contextual_inner_product(q, k, c) -> float:
    """``<q, k, c> = sum_d q_d k_d c_d``."""
    q = as_vector(q, "q")
    k = as_vector(k, "k")
    c = as_vector(c, "c")
    if not (q.shape == k.shape == c.shape):
        raise ShapeError(
            f"contextual inner product needs equal lengths, got "
            f"{q.shape[0]}, {k.shape[0]}, {c.shape[0]}"
        )
    return float(np.sum(q * k * c))


def identity_tensor(D: int) -> np.ndarray:
    """``D x D x D`` tensor with ones at ``(d, d, d)`` and zeros elsewhere."""
    if int(D) != D or D < 1:
        raise ValueError(f"identity tensor size must be a positive integer, got {D!r}")
    D = int(D)
    T = np.zeros((D, D, D))
    idx = np.arange(D)
    T[idx, idx, idx] = 1.0
    return T


def mode3_matricize(V) -> np.ndarray:
    """Unfold an ``I x J x D`` tensor into a ``D x (I*J)`` matrix.

    Column ``m = i * J + j`` (0-based) holds the fiber ``V[i, j, :]``. The
    same ``(i, j) -> m`` order is used when flattening attention grids, so
    ``mode3_matricize(Vc) @ A.reshape(-1)`` is the weighted fiber sum.
    """
    V = as_tensor3(V, "V")
    I, J, D = V.shape
    return np.ascontiguousarray(V.reshape(I * J, D).T)


def mode3_fold(M, I: int, J: int) -> np.ndarray:
    """Inverse of :func:`mode3_matricize`."""
    M = as_matrix(M, "M")
    if M.shape[1] != I * J:
        raise ShapeError(f"cannot fold {M.shape[1]} columns into {I} x {J} fibers")
    return np.ascontiguousarray(M.T.reshape(I, J, M.shape[0]))


def hadamard(a, b) -> np.ndarray:
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: lengths differ ({a.shape[0]} vs {b.shape[0]})")
    return a * b
