"""Plain tanh RNN and peephole LSTM cells, forward and backward.

LSTM weights are stored gate-stacked in the block order ``i, f, c, o``:

    W : (4H, D)   input weights W_i, W_f, W_c, W_o
    U : (4H, H)   recurrent weights U_i, U_f, U_c, U_o
    b : (4H,)     biases
    V : (3H, H)   peephole matrices V_i, V_f, V_o       (peephole="full")
        (3H,)     peephole diagonals                    (peephole="diagonal")

The candidate (block ``c``) has no peephole. The output gate peeks at the
*new* cell state ``c_t``, the input and forget gates at ``c_{t-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import lstm_bptt, lstm_run
from .numerics import as_matrix, as_vector

PEEPHOLES = ("full", "diagonal")


@dataclass
class RnnParams:
    W: np.ndarray  # (H, D)
    H: np.ndarray  # (H, H)
    b: np.ndarray  # (H,)

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        self.H = as_matrix(self.H, "H")
        self.b = as_vector(self.b, "b")
        n = self.b.shape[0]
        if self.W.shape[0] != n or self.H.shape != (n, n):
            raise ValueError(f"inconsistent RNN shapes W{self.W.shape} H{self.H.shape} b{self.b.shape}")


def rnn_step(p: RnnParams, x, h_prev) -> np.ndarray:
    x = as_vector(x, "x")
    h_prev = as_vector(h_prev, "h_prev")
    if x.shape[0] != p.W.shape[1] or h_prev.shape[0] != p.H.shape[0]:
        raise ValueError(
            f"rnn_step shape mismatch: W{p.W.shape} x({x.shape[0]},) H{p.H.shape} h_prev({h_prev.shape[0]},)"
        )
    return np.tanh(p.W @ x + p.H @ h_prev + p.b)


@dataclass
class LstmParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        self.U = as_matrix(self.U, "U")
        self.b = as_vector(self.b, "b")
        self.V = np.ascontiguousarray(self.V, dtype=np.float64)
        n4 = self.b.shape[0]
        if n4 % 4 or n4 == 0:
            raise ValueError(f"bias length {n4} is not 4*hidden")
        n = n4 // 4
        if self.W.shape[0] != n4 or self.U.shape != (n4, n):
            raise ValueError(f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")
        if self.V.shape not in ((3 * n, n), (3 * n,)):
            raise ValueError(f"peephole V has shape {self.V.shape}, expected {(3 * n, n)} or {(3 * n,)}")

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int, peephole: str = "full") -> "LstmParams":
        if peephole not in PEEPHOLES:
            raise ValueError(f"peephole must be one of {PEEPHOLES}, got {peephole!r}")
        n = hidden_dim
        V = np.zeros((3 * n, n)) if peephole == "full" else np.zeros(3 * n)
        return cls(np.zeros((4 * n, input_dim)), np.zeros((4 * n, n)), np.zeros(4 * n), V)

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    @property
    def peephole(self) -> str:
        return "full" if self.V.ndim == 2 else "diagonal"

    def named(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "U": self.U, "b": self.b, "V": self.V}

    def zeros_like(self) -> "LstmParams":
        return LstmParams(*(np.zeros_like(a) for a in (self.W, self.U, self.b, self.V)))

    def copy(self) -> "LstmParams":
        return LstmParams(*(a.copy() for a in (self.W, self.U, self.b, self.V)))

    # per-gate views, named as in the cell equations
    def _blk(self, a, k):
        n = self.hidden_dim
        return a[k * n:(k + 1) * n]

    W_i = property(lambda s: s._blk(s.W, 0))
    W_f = property(lambda s: s._blk(s.W, 1))
    W_c = property(lambda s: s._blk(s.W, 2))
    W_o = property(lambda s: s._blk(s.W, 3))
    U_i = property(lambda s: s._blk(s.U, 0))
    U_f = property(lambda s: s._blk(s.U, 1))
    U_c = property(lambda s: s._blk(s.U, 2))
    U_o = property(lambda s: s._blk(s.U, 3))
    b_i = property(lambda s: s._blk(s.b, 0))
    b_f = property(lambda s: s._blk(s.b, 1))
    b_c = property(lambda s: s._blk(s.b, 2))
    b_o = property(lambda s: s._blk(s.b, 3))
    V_i = property(lambda s: s._blk(s.V, 0))
    V_f = property(lambda s: s._blk(s.V, 1))
    V_o = property(lambda s: s._blk(s.V, 2))


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LstmState":
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))


@dataclass
class LstmStepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray  # candidate tanh(W_c x + U_c h + b_c)
    o: np.ndarray
    c: np.ndarray
    tc: np.ndarray  # tanh(c)
    h: np.ndarray


def _v2(p: LstmParams):
    # kernels take the peephole as 2-D; a diagonal becomes a (3H, 1) view
    return (p.V, False) if p.V.ndim == 2 else (p.V[:, None], True)


def _run(p: LstmParams, X, h0, c0):
    V, diag = _v2(p)
    return lstm_run(p.W, p.U, p.b, V, diag, X, h0, c0)


def lstm_step(p: LstmParams, x, prev: LstmState) -> tuple[LstmState, LstmStepCache]:
    x = as_vector(x, "x")
    if x.shape[0] != p.input_dim:
        raise ValueError(f"lstm_step: x has length {x.shape[0]}, cell expects input_dim={p.input_dim}")
    n = p.hidden_dim
    if prev.h.shape != (n,) or prev.c.shape != (n,):
        raise ValueError(f"lstm_step: state shapes h{prev.h.shape} c{prev.c.shape}, expected ({n},)")
    H, C, G = _run(p, x[None, :], np.ascontiguousarray(prev.h, dtype=np.float64),
                   np.ascontiguousarray(prev.c, dtype=np.float64))
    h, c = H[1], C[1]
    i, f, g, o = G[0, :n], G[0, n:2 * n], G[0, 2 * n:3 * n], G[0, 3 * n:]
    return LstmState(h, c), LstmStepCache(x, prev.h, prev.c, i, f, g, o, c, np.tanh(c), h)


def _step_back(p: LstmParams, i, f, g, o, c, tc, c_prev, dh, dc):
    """Single-step backward in numpy (the sequence BPTT loop lives in ``_kernels``).

    Returns the pre-activation gradient ``da`` (4H, gate order i,f,c,o) and
    the gradient flowing into ``c_{t-1}``.
    """
    n = c.shape[0]
    V = p.V
    da_o = dh * tc * o * (1.0 - o)
    dct = dc + dh * o * (1.0 - tc * tc)
    if V.ndim == 2:
        dct = dct + V[2 * n:].T @ da_o
    else:
        dct = dct + V[2 * n:] * da_o
    da_i = dct * g * i * (1.0 - i)
    da_f = dct * c_prev * f * (1.0 - f)
    da_g = dct * i * (1.0 - g * g)
    dc_prev = dct * f
    if V.ndim == 2:
        dc_prev = dc_prev + V[:n].T @ da_i + V[n:2 * n].T @ da_f
    else:
        dc_prev = dc_prev + V[:n] * da_i + V[n:2 * n] * da_f
    return np.concatenate((da_i, da_f, da_g, da_o)), dc_prev


def lstm_step_backward(p: LstmParams, cache: LstmStepCache | None, grad_h, grad_c):
    """Backward through one step.

    ``grad_h`` and ``grad_c`` are the upstream gradients on ``h_t`` and
    ``c_t``. Returns ``(grads, grad_x, grad_prev_h, grad_prev_c)`` where
    ``grads`` is an ``LstmParams`` holding the parameter gradients.
    """
    if cache is None:
        raise ValueError("lstm_step_backward needs the cache from a training-mode lstm_step")
    dh = as_vector(grad_h, "grad_h")
    dc = as_vector(grad_c, "grad_c")
    k = cache
    da, dc_prev = _step_back(p, k.i, k.f, k.g, k.o, k.c, k.tc, k.c_prev, dh, dc)
    n = p.hidden_dim
    if p.V.ndim == 2:
        dV = np.vstack((np.outer(da[:n], k.c_prev), np.outer(da[n:2 * n], k.c_prev), np.outer(da[3 * n:], k.c)))
    else:
        dV = np.concatenate((da[:n] * k.c_prev, da[n:2 * n] * k.c_prev, da[3 * n:] * k.c))
    grads = LstmParams(np.outer(da, k.x), np.outer(da, k.h_prev), da.copy(), dV)
    return grads, p.W.T @ da, p.U.T @ da, dc_prev


@dataclass
class LstmTrace:
    """Per-step states and gate activations of one sequence, kept for BPTT."""

    X: np.ndarray
    H: np.ndarray  # (T+1, n), row 0 is h_0
    C: np.ndarray  # (T+1, n), row 0 is c_0
    G: np.ndarray  # (T, 4n) gate activations i, f, g, o


def lstm_forward(p: LstmParams, X: np.ndarray, h0=None, c0=None) -> tuple[np.ndarray, LstmTrace]:
    """Run the cell over the rows of ``X`` (zero initial state by default).

    Returns ``(H, trace)`` with ``H[t]`` the hidden state after ``t + 1``
    observations.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.input_dim:
        raise ValueError(f"lstm_forward: X has shape {X.shape}, cell expects (T, {p.input_dim})")
    n = p.hidden_dim
    h0 = np.zeros(n) if h0 is None else np.ascontiguousarray(h0, dtype=np.float64)
    c0 = np.zeros(n) if c0 is None else np.ascontiguousarray(c0, dtype=np.float64)
    H, C, G = _run(p, X, h0, c0)
    return H[1:], LstmTrace(X, H, C, G)


def lstm_backward(p: LstmParams, tr: LstmTrace | None, dH: np.ndarray, dc_last=None):
    """BPTT for :func:`lstm_forward`.

    ``dH[t]`` is the loss gradient arriving at ``h_t`` from the layer above.
    Returns ``(grads, dX, dh0, dc0)`` with ``grads`` an :class:`LstmParams`.
    """
    if tr is None:
        raise ValueError("lstm_backward needs the trace returned by lstm_forward")
    V, diag = _v2(p)
    n = p.hidden_dim
    dc_last = np.zeros(n) if dc_last is None else np.ascontiguousarray(dc_last, dtype=np.float64)
    dW, dU, db, dV, dX, dh0, dc0 = lstm_bptt(
        p.W, p.U, V, diag, tr.X, tr.H, tr.C, tr.G, np.ascontiguousarray(dH, dtype=np.float64), dc_last
    )
    return LstmParams(dW, dU, db, dV if not diag else dV[:, 0]), dX, dh0, dc0
