"""Independent high-precision forward pass and loss.

Written gate by gate, sharing no code with :mod:`fusion_rnn.network`, and
evaluated either in ``numpy.longdouble`` (80-bit on x86-64) or in mpmath at
arbitrary precision. It is the finite-difference oracle for the gradient
check: differencing a float64 loss at step 1e-6 leaves ~1e-10 absolute noise,
which swamps near-zero gradient entries.
"""

from __future__ import annotations

from types import SimpleNamespace

import mpmath
import numpy as np

LONGDOUBLE = SimpleNamespace(
    cast=lambda a: np.asarray(a, dtype=np.longdouble),
    exp=np.exp,
    tanh=np.tanh,
    log=np.log,
    one=np.longdouble(1),
    zero=np.longdouble(0),
)


def mp_backend(dps: int = 40) -> SimpleNamespace:
    ctx = mpmath.MPContext()
    ctx.dps = dps
    mpf = np.frompyfunc(lambda v: ctx.mpf(str(v)), 1, 1)  # str keeps long-double digits

    def cast(a):
        a = np.asarray(a)
        return a if a.dtype == object else mpf(a)

    return SimpleNamespace(
        cast=cast,
        exp=np.frompyfunc(ctx.exp, 1, 1),
        tanh=np.frompyfunc(ctx.tanh, 1, 1),
        log=np.frompyfunc(ctx.log, 1, 1),
        one=ctx.mpf(1),
        zero=ctx.mpf(0),
    )


def _lstm(bk, arrs, prefix, X, n):
    W = arrs[f"{prefix}.W"]
    U = arrs[f"{prefix}.U"]
    b = arrs[f"{prefix}.b"]
    V = arrs[f"{prefix}.V"]
    Wi, Wf, Wc, Wo = (W[k * n:(k + 1) * n] for k in range(4))
    Ui, Uf, Uc, Uo = (U[k * n:(k + 1) * n] for k in range(4))
    bi, bf, bc, bo = (b[k * n:(k + 1) * n] for k in range(4))
    Vi, Vf, Vo = (V[k * n:(k + 1) * n] for k in range(3))

    def peep(M, c):
        return M.dot(c) if M.ndim == 2 else M * c

    def sig(a):
        return bk.one / (bk.one + bk.exp(-a))

    h = bk.cast(np.zeros(n))
    c = bk.cast(np.zeros(n))
    hs = []
    for x in X:
        i = sig(Wi.dot(x) + Ui.dot(h) + peep(Vi, c) + bi)
        f = sig(Wf.dot(x) + Uf.dot(h) + peep(Vf, c) + bf)
        c = f * c + i * bk.tanh(Wc.dot(x) + Uc.dot(h) + bc)
        o = sig(Wo.dot(x) + Uo.dot(h) + peep(Vo, c) + bo)
        h = o * bk.tanh(c)
        hs.append(h)
    return hs


def reference_loss(cfg, named: dict, X, Z, k: int, scheme: str, backend=LONGDOUBLE):
    """Anticipation loss of the network in ``cfg`` with parameters ``named``.

    ``named`` arrays are cast with ``backend.cast`` (a no-op when they are
    already of the backend's type).
    """
    bk = backend
    arrs = {name: bk.cast(a) for name, a in named.items()}
    X = bk.cast(X)
    Z = bk.cast(Z)
    n = cfg.hidden_dim
    T = X.shape[0]
    if cfg.variant == "fusion":
        hx = _lstm(bk, arrs, "lstm_x", X, n)
        hz = _lstm(bk, arrs, "lstm_z", Z, n)
        feats = [bk.tanh(arrs["W_f"].dot(np.concatenate((a, b))) + arrs["b_f"]) for a, b in zip(hx, hz)]
    else:
        feats = _lstm(bk, arrs, "lstm_x", np.concatenate((X, Z), axis=1), n)
    total = bk.zero
    for t, e in enumerate(feats, start=1):
        logits = arrs["W_y"].dot(e) + arrs["b_y"]
        logits = logits - logits.max()
        log_p = logits[k] - bk.log(bk.exp(logits).sum())
        w = bk.exp(bk.one * (t - T)) if scheme == "exponential" else bk.one
        total = total - w * log_p
    return total
