"""Two-stream anticipation network and its time-weighted loss.

``variant="fusion"``: each stream runs through its own LSTM, the two hidden
states are concatenated ``[h_x; h_z]`` and squashed by a tanh fusion layer
before the softmax head.

``variant="simple"``: the streams are concatenated at the input and fed to
a single LSTM; the softmax head reads its hidden state directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .cells import PEEPHOLES, LstmParams, LstmTrace, _run, lstm_backward, lstm_forward
from ._kernels import head_run

VARIANTS = ("fusion", "simple")
LOSS_SCHEMES = ("exponential", "uniform")
CHECKPOINT_VERSION = 1
_EMPTY, _EMPTY1 = np.zeros((0, 0)), np.zeros(0)


@dataclass(frozen=True)
class NetConfig:
    variant: str = "fusion"
    inside_dim: int = 12
    outside_dim: int = 6
    hidden_dim: int = 64
    fusion_dim: int = 64
    num_classes: int = 5
    loss_scheme: str = "exponential"
    peephole: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.loss_scheme not in LOSS_SCHEMES:
            raise ValueError(f"loss_scheme must be one of {LOSS_SCHEMES}, got {self.loss_scheme!r}")
        if self.peephole not in PEEPHOLES:
            raise ValueError(f"peephole must be one of {PEEPHOLES}, got {self.peephole!r}")
        for name in ("inside_dim", "outside_dim", "hidden_dim", "fusion_dim", "num_classes"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class NetParams:
    lstm_x: LstmParams
    W_y: np.ndarray
    b_y: np.ndarray
    lstm_z: LstmParams | None = None
    W_f: np.ndarray | None = None
    b_f: np.ndarray | None = None

    def named(self) -> dict[str, np.ndarray]:
        """Flat name -> array map in a fixed order (arrays are shared, not copied)."""
        out = {f"lstm_x.{k}": v for k, v in self.lstm_x.named().items()}
        if self.lstm_z is not None:
            out.update({f"lstm_z.{k}": v for k, v in self.lstm_z.named().items()})
            out["W_f"] = self.W_f
            out["b_f"] = self.b_f
        out["W_y"] = self.W_y
        out["b_y"] = self.b_y
        return out

    def _map(self, fn) -> "NetParams":
        return NetParams(
            LstmParams(*(fn(a) for a in self.lstm_x.named().values())),
            fn(self.W_y),
            fn(self.b_y),
            None if self.lstm_z is None else LstmParams(*(fn(a) for a in self.lstm_z.named().values())),
            None if self.W_f is None else fn(self.W_f),
            None if self.b_f is None else fn(self.b_f),
        )

    def copy(self) -> "NetParams":
        return self._map(np.copy)

    def zeros_like(self) -> "NetParams":
        return self._map(np.zeros_like)

    def num_parameters(self) -> int:
        return sum(a.size for a in self.named().values())


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    n = cfg.hidden_dim
    V = (3 * n, n) if cfg.peephole == "full" else (3 * n,)

    def lstm(prefix, d):
        return {f"{prefix}.W": (4 * n, d), f"{prefix}.U": (4 * n, n), f"{prefix}.b": (4 * n,), f"{prefix}.V": V}

    if cfg.variant == "fusion":
        shapes = lstm("lstm_x", cfg.inside_dim)
        shapes.update(lstm("lstm_z", cfg.outside_dim))
        shapes["W_f"] = (cfg.fusion_dim, 2 * n)
        shapes["b_f"] = (cfg.fusion_dim,)
        shapes["W_y"] = (cfg.num_classes, cfg.fusion_dim)
    else:
        shapes = lstm("lstm_x", cfg.inside_dim + cfg.outside_dim)
        shapes["W_y"] = (cfg.num_classes, n)
    shapes["b_y"] = (cfg.num_classes,)
    return shapes


def params_from_named(cfg: NetConfig, arrays: dict[str, np.ndarray]) -> NetParams:
    shapes = param_shapes(cfg)
    if set(arrays) != set(shapes):
        raise ValueError(f"parameter names {sorted(arrays)} do not match config ({sorted(shapes)})")
    a = {}
    for name, shape in shapes.items():
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        if arr.shape != shape:
            raise ValueError(f"parameter {name} has shape {arr.shape}, config requires {shape}")
        a[name] = arr

    def lstm(prefix):
        return LstmParams(a[f"{prefix}.W"], a[f"{prefix}.U"], a[f"{prefix}.b"], a[f"{prefix}.V"])

    if cfg.variant == "fusion":
        return NetParams(lstm("lstm_x"), a["W_y"], a["b_y"], lstm("lstm_z"), a["W_f"], a["b_f"])
    return NetParams(lstm("lstm_x"), a["W_y"], a["b_y"])


def zero_params(cfg: NetConfig) -> NetParams:
    return params_from_named(cfg, {k: np.zeros(s) for k, s in param_shapes(cfg).items()})


def init_params(cfg: NetConfig, rng: np.random.Generator, scale: float = 0.08) -> NetParams:
    """Uniform(-scale, scale) per entry, drawn in ``param_shapes`` order."""
    return params_from_named(cfg, {k: rng.uniform(-scale, scale, size=s) for k, s in param_shapes(cfg).items()})


# ---------------------------------------------------------------- forward

@dataclass
class SequenceOutput:
    y: np.ndarray  # (T, K), row t is the class distribution after t+1 observations
    traces: list[LstmTrace] = field(default_factory=list)
    E: np.ndarray | None = None  # fusion activations (T, fusion_dim)
    Hx: np.ndarray | None = None
    Hz: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.y.shape[0]


def _head(p: NetParams, Hx, Hz=None):
    if p.W_f is None:
        return head_run(_EMPTY, _EMPTY1, p.W_y, p.b_y, Hx, Hx, False)
    return head_run(p.W_f, p.b_f, p.W_y, p.b_y, Hx, Hz, True)


def _check_streams(cfg: NetConfig, X, Z):
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if X.ndim != 2 or Z.ndim != 2:
        raise ValueError("streams must be 2-D arrays of shape (T, dim)")
    if X.shape[0] != Z.shape[0]:
        raise ValueError(f"stream length mismatch: inside has T={X.shape[0]}, outside has T={Z.shape[0]}")
    if X.shape[0] < 1:
        raise ValueError("empty sequence")
    if X.shape[1] != cfg.inside_dim or Z.shape[1] != cfg.outside_dim:
        raise ValueError(
            f"stream dims ({X.shape[1]}, {Z.shape[1]}) do not match config ({cfg.inside_dim}, {cfg.outside_dim})"
        )
    return X, Z


def forward_fusion(p: NetParams, cfg: NetConfig, X, Z, keep: bool = True) -> SequenceOutput:
    X, Z = _check_streams(cfg, X, Z)
    Hx, tx = lstm_forward(p.lstm_x, X)
    Hz, tz = lstm_forward(p.lstm_z, Z)
    E, Y = _head(p, Hx, Hz)
    if not keep:
        return SequenceOutput(Y)
    return SequenceOutput(Y, [tx, tz], E, Hx, Hz)


def forward_simple(p: NetParams, cfg: NetConfig, X, Z, keep: bool = True) -> SequenceOutput:
    X, Z = _check_streams(cfg, X, Z)
    H, tr = lstm_forward(p.lstm_x, np.hstack((X, Z)))
    _, Y = _head(p, H)
    if not keep:
        return SequenceOutput(Y)
    return SequenceOutput(Y, [tr], Hx=H)


def forward(p: NetParams, cfg: NetConfig, X, Z, keep: bool = True) -> SequenceOutput:
    if cfg.variant == "fusion":
        return forward_fusion(p, cfg, X, Z, keep)
    return forward_simple(p, cfg, X, Z, keep)


# ---------------------------------------------------------------- loss

def time_weights(T: int, scheme: str) -> np.ndarray:
    """Per-step loss weights; exponential gives exp(-(T - t)) for t = 1..T."""
    if scheme == "exponential":
        return np.exp(-(T - np.arange(1, T + 1, dtype=np.float64)))
    if scheme == "uniform":
        return np.ones(T)
    raise ValueError(f"unknown loss scheme {scheme!r}")


def anticipation_loss(out: SequenceOutput | np.ndarray, k: int, scheme: str) -> float:
    Y = out.y if isinstance(out, SequenceOutput) else np.asarray(out, dtype=np.float64)
    if not 0 <= k < Y.shape[1]:
        raise ValueError(f"label index {k} outside [0, {Y.shape[1]})")
    pk = Y[:, k]
    if np.any(pk <= 0.0):
        raise ValueError("probability of the true class is not positive; log undefined")
    w = time_weights(Y.shape[0], scheme)
    return float(-(w * np.log(pk)).sum())


def backward(p: NetParams, cfg: NetConfig, out: SequenceOutput, k: int, scheme: str | None = None,
             weights: np.ndarray | None = None) -> NetParams:
    """Gradient of :func:`anticipation_loss` with respect to every parameter.

    ``weights`` overrides the per-step loss weights (used by tests of
    linearity); by default they come from ``scheme`` or ``cfg.loss_scheme``.
    """
    if not out.traces:
        raise ValueError("backward needs a SequenceOutput produced with keep=True")
    T, K = out.y.shape
    if weights is None:
        weights = time_weights(T, scheme or cfg.loss_scheme)
    dlogits = out.y.copy()
    dlogits[:, k] -= 1.0
    dlogits *= np.asarray(weights, dtype=np.float64)[:, None]
    g = p.zeros_like()
    if cfg.variant == "fusion":
        g.W_y[...] = dlogits.T @ out.E
        g.b_y[...] = dlogits.sum(0)
        dae = (dlogits @ p.W_y) * (1.0 - out.E * out.E)
        hcat = np.hstack((out.Hx, out.Hz))
        g.W_f[...] = dae.T @ hcat
        g.b_f[...] = dae.sum(0)
        dhcat = dae @ p.W_f
        n = cfg.hidden_dim
        g.lstm_x = lstm_backward(p.lstm_x, out.traces[0], dhcat[:, :n])[0]
        g.lstm_z = lstm_backward(p.lstm_z, out.traces[1], dhcat[:, n:])[0]
    else:
        g.W_y[...] = dlogits.T @ out.Hx
        g.b_y[...] = dlogits.sum(0)
        g.lstm_x = lstm_backward(p.lstm_x, out.traces[0], dlogits @ p.W_y)[0]
    return g


def loss_and_grad(p: NetParams, cfg: NetConfig, X, Z, k: int) -> tuple[float, NetParams]:
    out = forward(p, cfg, X, Z)
    return anticipation_loss(out, k, cfg.loss_scheme), backward(p, cfg, out, k)


# ---------------------------------------------------------------- model + streaming

def _advance(p: LstmParams, x, h, c):
    H, C, _ = _run(p, x[None, :], h, c)
    return H[1], C[1]


class Stream:
    """Incremental evaluator: one observation pair in, one distribution out.

    Uses the same per-step arithmetic as :func:`forward`, so the output after
    ``t`` pushes is bit-identical to ``forward`` on the length-``t`` prefix.
    """

    def __init__(self, model: "Model"):
        self.model = model
        n = model.config.hidden_dim
        self._hx = np.zeros(n)
        self._cx = np.zeros(n)
        self._hz = np.zeros(n)
        self._cz = np.zeros(n)
        self.t = 0

    def push(self, x, z) -> np.ndarray:
        p, cfg = self.model.params, self.model.config
        x = np.asarray(x, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        if x.shape != (cfg.inside_dim,) or z.shape != (cfg.outside_dim,):
            raise ValueError(f"observation dims {x.shape}, {z.shape} do not match config")
        if cfg.variant == "fusion":
            self._hx, self._cx = _advance(p.lstm_x, x, self._hx, self._cx)
            self._hz, self._cz = _advance(p.lstm_z, z, self._hz, self._cz)
            _, Y = _head(p, self._hx[None, :], self._hz[None, :])
        else:
            self._hx, self._cx = _advance(p.lstm_x, np.concatenate((x, z)), self._hx, self._cx)
            _, Y = _head(p, self._hx[None, :])
        self.t += 1
        return Y[0]


@dataclass
class Model:
    config: NetConfig
    params: NetParams
    class_names: list[str]

    def __post_init__(self):
        if len(self.class_names) != self.config.num_classes:
            raise ValueError(f"{len(self.class_names)} class names for num_classes={self.config.num_classes}")

    def stream(self) -> Stream:
        return Stream(self)

    def predict_proba(self, X, Z) -> np.ndarray:
        return forward(self.params, self.config, X, Z, keep=False).y


# ---------------------------------------------------------------- checkpoints

def checkpoint_dict(model: Model) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "class_names": list(model.class_names),
        "params": {
            name: {"shape": list(a.shape), "data": [float(v) for v in a.ravel(order="C")]}
            for name, a in model.params.named().items()
        },
    }


def model_from_dict(doc: dict) -> Model:
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    known = {f.name for f in fields(NetConfig)}
    extra = set(doc["config"]) - known
    if extra:
        raise ValueError(f"unknown config fields in checkpoint: {sorted(extra)}")
    cfg = NetConfig(**doc["config"])
    arrays = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != math.prod(shape):
            raise ValueError(f"parameter {name}: {data.size} values for shape {shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"parameter {name} contains non-finite values")
        arrays[name] = data.reshape(shape)
    return Model(cfg, params_from_named(cfg, arrays), list(doc["class_names"]))


def save_checkpoint(model: Model, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(checkpoint_dict(model), indent=1) + "\n")


def load_checkpoint(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))
