"""Compiled LSTM recurrence and BPTT loops.

Plain loops, no BLAS, no fastmath: the summation order is fixed by the code,
so every caller (training, full-prefix replay, streaming) gets bit-identical
numbers for the same step. Peephole matrices arrive as 2-D arrays; a
diagonal peephole is passed as shape (3H, 1) with ``diag=True``.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sig(a):
    # branch on the sign so exp never overflows and tiny outputs keep full relative precision
    if a >= 0.0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


@njit(cache=True)
def lstm_run(W, U, b, V, diag, X, h0, c0):
    """Returns ``H (T+1, n)``, ``C (T+1, n)`` and gate activations ``G (T, 4n)``
    in block order i, f, g (candidate), o. Row 0 of H and C is the initial state."""
    T, d = X.shape
    n = U.shape[1]
    H = np.empty((T + 1, n))
    C = np.empty((T + 1, n))
    G = np.empty((T, 4 * n))
    a = np.empty(4 * n)
    H[0, :] = h0
    C[0, :] = c0
    for t in range(T):
        for r in range(4 * n):
            s = b[r]
            for j in range(d):
                s += W[r, j] * X[t, j]
            for j in range(n):
                s += U[r, j] * H[t, j]
            a[r] = s
        for r in range(2 * n):
            if diag:
                a[r] += V[r, 0] * C[t, r % n]
            else:
                s = 0.0
                for j in range(n):
                    s += V[r, j] * C[t, j]
                a[r] += s
        for r in range(n):
            i = _sig(a[r])
            f = _sig(a[n + r])
            g = math.tanh(a[2 * n + r])
            G[t, r] = i
            G[t, n + r] = f
            G[t, 2 * n + r] = g
            C[t + 1, r] = f * C[t, r] + i * g
        for r in range(n):
            s = a[3 * n + r]
            if diag:
                s += V[2 * n + r, 0] * C[t + 1, r]
            else:
                for j in range(n):
                    s += V[2 * n + r, j] * C[t + 1, j]
            o = _sig(s)
            G[t, 3 * n + r] = o
            H[t + 1, r] = o * math.tanh(C[t + 1, r])
    return H, C, G


@njit(cache=True)
def lstm_bptt(W, U, V, diag, X, H, C, G, dH, dc_last):
    """Gradients of a loss whose derivative w.r.t. ``h_t`` is ``dH[t]``.

    Returns ``dW, dU, db, dV, dX, dh0, dc0``; ``dc_last`` is an extra
    upstream gradient on the final cell state (zero in normal training).
    """
    T, d = X.shape
    n = U.shape[1]
    dW = np.zeros(W.shape)
    dU = np.zeros(U.shape)
    db = np.zeros(4 * n)
    dV = np.zeros(V.shape)
    dX = np.zeros((T, d))
    da = np.empty(4 * n)
    dh = np.zeros(n)
    dc = dc_last.copy()
    dct = np.empty(n)
    for t in range(T - 1, -1, -1):
        for r in range(n):
            dh[r] += dH[t, r]
        # output gate, then everything that reaches c_t
        for r in range(n):
            o = G[t, 3 * n + r]
            tc = math.tanh(C[t + 1, r])
            da[3 * n + r] = dh[r] * tc * o * (1.0 - o)
            dct[r] = dc[r] + dh[r] * o * (1.0 - tc * tc)
        for j in range(n):
            if diag:
                dct[j] += V[2 * n + j, 0] * da[3 * n + j]
            else:
                s = 0.0
                for r in range(n):
                    s += V[2 * n + r, j] * da[3 * n + r]
                dct[j] += s
        for r in range(n):
            i = G[t, r]
            f = G[t, n + r]
            g = G[t, 2 * n + r]
            da[r] = dct[r] * g * i * (1.0 - i)
            da[n + r] = dct[r] * C[t, r] * f * (1.0 - f)
            da[2 * n + r] = dct[r] * i * (1.0 - g * g)
        # carry to step t-1
        for j in range(n):
            s = dct[j] * G[t, n + j]
            if diag:
                s += V[j, 0] * da[j] + V[n + j, 0] * da[n + j]
            else:
                for r in range(n):
                    s += V[r, j] * da[r] + V[n + r, j] * da[n + r]
            dc[j] = s
        for j in range(n):
            s = 0.0
            for r in range(4 * n):
                s += U[r, j] * da[r]
            dh[j] = s
        for j in range(d):
            s = 0.0
            for r in range(4 * n):
                s += W[r, j] * da[r]
            dX[t, j] = s
        # parameter gradients
        for r in range(4 * n):
            g_r = da[r]
            db[r] += g_r
            for j in range(d):
                dW[r, j] += g_r * X[t, j]
            for j in range(n):
                dU[r, j] += g_r * H[t, j]
        for r in range(n):
            if diag:
                dV[r, 0] += da[r] * C[t, r]
                dV[n + r, 0] += da[n + r] * C[t, r]
                dV[2 * n + r, 0] += da[3 * n + r] * C[t + 1, r]
            else:
                for j in range(n):
                    dV[r, j] += da[r] * C[t, j]
                    dV[n + r, j] += da[n + r] * C[t, j]
                    dV[2 * n + r, j] += da[3 * n + r] * C[t + 1, j]
    return dW, dU, db, dV, dX, dh, dc


@njit(cache=True)
def head_run(Wf, bf, Wy, by, Hx, Hz, fused):
    """Softmax head over the rows of ``Hx`` (and ``Hz`` when ``fused``).

    Fused: ``e = tanh(Wf[:, :n] hx + Wf[:, n:] hz + bf)``, ``y = softmax(Wy e + by)``;
    the two blocks are summed separately so swapping streams is exact.
    Otherwise ``y = softmax(Wy hx + by)`` and ``E`` is left empty.
    """
    T, n = Hx.shape
    K = Wy.shape[0]
    m = Wf.shape[0] if fused else 0
    E = np.empty((T, m))
    Y = np.empty((T, K))
    z = np.empty(K)
    for t in range(T):
        for r in range(m):
            sx = 0.0
            for j in range(n):
                sx += Wf[r, j] * Hx[t, j]
            sz = 0.0
            for j in range(n):
                sz += Wf[r, n + j] * Hz[t, j]
            E[t, r] = math.tanh(sx + sz + bf[r])
        top = -np.inf
        for k in range(K):
            s = 0.0
            if fused:
                for j in range(m):
                    s += Wy[k, j] * E[t, j]
            else:
                for j in range(n):
                    s += Wy[k, j] * Hx[t, j]
            z[k] = s + by[k]
            if z[k] > top:
                top = z[k]
        tot = 0.0
        for k in range(K):
            z[k] = math.exp(z[k] - top)
            tot += z[k]
        for k in range(K):
            Y[t, k] = z[k] / tot
    return E, Y


@njit(cache=True)
def rmsprop_step(theta, g, acc, lr, rho, eps):
    """In-place RMSprop on flat views. Returns False (touching nothing) if
    ``g`` has a non-finite entry."""
    for i in range(g.shape[0]):
        if not math.isfinite(g[i]):
            return False
    for i in range(g.shape[0]):
        a = rho * acc[i] + (1.0 - rho) * g[i] * g[i]
        acc[i] = a
        den = math.sqrt(a + eps)
        if den > 0.0:
            theta[i] -= lr * (g[i] / den)
    return True


@njit(cache=True)
def matvec_loop(A, x):
    m, n = A.shape
    out = np.empty(m)
    for r in range(m):
        s = 0.0
        for j in range(n):
            s += A[r, j] * x[j]
        out[r] = s
    return out
