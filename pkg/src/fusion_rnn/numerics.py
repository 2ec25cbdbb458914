"""Dense float64 kernels shared by the cells, the network and the loss.

Matrices are 2-D and vectors 1-D ``numpy.float64`` arrays (C order, i.e.
row-major). The checked entry points below validate shapes and finiteness.
``matvec`` is a plain compiled loop (left-to-right sums, no BLAS), the same
arithmetic the recurrent kernels in ``_kernels`` use.
"""

from __future__ import annotations

import numpy as np

from ._kernels import matvec_loop

ACTIVATIONS = ("sigmoid", "tanh")


def as_matrix(a, name="matrix") -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name}: expected a non-empty 2-D array, got shape {m.shape}")
    return m


def as_vector(v, name="vector") -> np.ndarray:
    x = np.ascontiguousarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name}: expected a 1-D array, got shape {x.shape}")
    return x


def matvec(A, x) -> np.ndarray:
    A = as_matrix(A, "A")
    x = as_vector(x, "x")
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"matvec shape mismatch: A is {A.shape[0]}x{A.shape[1]}, x has length {x.shape[0]}")
    return matvec_loop(A, x)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # same two-branch form as the compiled cells: no overflow, full relative precision near 0
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softmax(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max())
    return e / e.sum()


def _check_finite(v: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what}: input contains NaN or infinite entries")


def softmax(v) -> np.ndarray:
    """Numerically safe softmax (max-subtracted)."""
    v = as_vector(v, "v")
    if v.shape[0] < 1:
        raise ValueError("softmax of an empty vector")
    _check_finite(v, "softmax")
    return _softmax(v)


def apply_activation(v, kind: str) -> np.ndarray:
    v = as_vector(v, "v")
    _check_finite(v, kind)
    if kind == "sigmoid":
        return _sigmoid(v)
    if kind == "tanh":
        return np.tanh(v)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def sigmoid(v) -> np.ndarray:
    return apply_activation(v, "sigmoid")


def tanh(v) -> np.ndarray:
    return apply_activation(v, "tanh")
