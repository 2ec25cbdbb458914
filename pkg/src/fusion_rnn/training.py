"""Sub-sequence augmentation, RMSprop and the per-sequence BPTT training loop."""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from ._kernels import rmsprop_step
from .dataset import Dataset, Event
from .reference import mp_backend, reference_loss
from .network import (
    Model,
    NetConfig,
    NetParams,
    anticipation_loss,
    backward,
    forward,
    init_params,
    zero_params,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 30
    batch_size: int = 1
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    seed: int = 0
    augmentation_factor: float = 3.214
    min_subseq_len: int = 5
    loss_scheme: str | None = None  # None: use the network config's scheme
    shuffle: bool = True
    init_scale: float = 0.08

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if self.rmsprop_epsilon < 0:
            raise ValueError("rmsprop_epsilon must be >= 0")
        if self.augmentation_factor < 1.0:
            raise ValueError("augmentation_factor must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or self.min_subseq_len < 2:
            raise ValueError("need epochs >= 0, batch_size >= 1, min_subseq_len >= 2")


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------- augmentation

@lru_cache(maxsize=None)
def _windows(T: int, min_len: int) -> tuple[tuple[int, int], ...]:
    # all half-open [start, stop) with stop - start >= min_len
    return tuple((s, s + L) for L in range(min_len, T + 1) for s in range(T - L + 1))


def augment(d: Dataset, cfg: TrainConfig) -> Dataset:
    """Original events plus random contiguous sub-sequences of them.

    Extra events are spread round-robin over a seeded permutation of the
    eligible originals until the total reaches
    ``round(augmentation_factor * len(d))``. Each extra is a window drawn
    uniformly among all windows of at least ``min_subseq_len`` steps; the
    same window may be drawn twice.
    """
    n = len(d.events)
    if n == 0:
        raise ValueError("cannot augment an empty dataset")
    target = int(round(cfg.augmentation_factor * n))
    if target <= n:
        return d.subset(d.events)
    eligible = []
    for e in d.events:
        if e.T < cfg.min_subseq_len:
            log.warning("event %s has %d steps (< %d); not sampled for augmentation", e.event_id, e.T, cfg.min_subseq_len)
        else:
            eligible.append(e)
    if not eligible:
        log.warning("no event is long enough to augment; returning originals")
        return d.subset(d.events)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(eligible))
    extras = []
    for m in range(target - n):
        src = eligible[order[m % len(eligible)]]
        wins = _windows(src.T, cfg.min_subseq_len)
        s, stop = wins[int(rng.integers(len(wins)))]
        extras.append(
            Event(
                f"{src.event_id}@{s}:{stop}#{m}",
                src.label,
                src.inside[s:stop],
                src.outside[s:stop],
                src.seconds_per_step,
                source_id=src.origin,
                span=(s, stop),
            )
        )
    return d.subset(d.events + extras)


# ---------------------------------------------------------------- RMSprop

@dataclass
class RmspropState:
    acc: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: NetParams) -> "RmspropState":
        return cls({k: np.zeros_like(v) for k, v in params.named().items()})


def rmsprop_update(params: NetParams, grads: NetParams, state: RmspropState, cfg: TrainConfig):
    """In-place step: ``acc = rho*acc + (1-rho)*g^2``; ``theta -= lr*g/sqrt(acc+eps)``."""
    rho, lr, eps = cfg.rmsprop_decay, cfg.learning_rate, cfg.rmsprop_epsilon
    gnamed = grads.named()
    for name, theta in params.named().items():
        g = gnamed[name]
        acc = state.acc[name]
        if g.shape != theta.shape or acc.shape != theta.shape:
            raise ValueError(f"{name}: gradient/state shape does not match parameter {theta.shape}")
        # flat views (all parameter arrays are C-contiguous); entries with
        # acc + eps == 0 are left in place rather than divided by zero
        if not rmsprop_step(theta.reshape(-1), np.ascontiguousarray(g).reshape(-1), acc.reshape(-1), lr, rho, eps):
            raise ValueError(f"non-finite gradient in parameter {name}")
    return params, state


def _add_into(total: NetParams, g: NetParams) -> None:
    gn = g.named()
    for k, v in total.named().items():
        v += gn[k]


# ---------------------------------------------------------------- training loop

@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    checksum: str = ""

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"epoch_loss": list(self.epoch_loss), "epochs": len(self.epoch_loss), "checksum": self.checksum}
        if include_timing:
            d["wall_time"] = list(self.wall_time)
        return d


def params_checksum(params: NetParams) -> str:
    h = hashlib.sha256()
    for name, a in params.named().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def train(d: Dataset, net_cfg: NetConfig, cfg: TrainConfig, params: NetParams | None = None,
          on_epoch=None) -> tuple[NetParams, TrainHistory]:
    """Stochastic RMSprop over per-sequence BPTT gradients.

    Every step of a sequence is trained towards the sequence label. With a
    fixed seed and dataset the run is bit-for-bit reproducible.
    ``on_epoch(epoch, params, history)`` is called after each epoch.
    """
    if (d.inside_dim, d.outside_dim) != (net_cfg.inside_dim, net_cfg.outside_dim):
        raise ValueError(
            f"dataset dims ({d.inside_dim}, {d.outside_dim}) != model dims ({net_cfg.inside_dim}, {net_cfg.outside_dim})"
        )
    if len(d.class_names) != net_cfg.num_classes:
        raise ValueError(f"dataset has {len(d.class_names)} classes, model expects {net_cfg.num_classes}")
    if cfg.loss_scheme is not None and cfg.loss_scheme != net_cfg.loss_scheme:
        net_cfg = replace(net_cfg, loss_scheme=cfg.loss_scheme)
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(net_cfg, rng, cfg.init_scale)
    history = TrainHistory()
    if cfg.epochs > 0 and not d.events:
        raise ValueError("cannot train on an empty dataset")
    state = RmspropState.zeros(params)
    labels = [d.label_index(e.label) for e in d.events]
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(d.events)) if cfg.shuffle else np.arange(len(d.events))
        total = 0.0
        batch = None
        in_batch = 0
        for j in order:
            e = d.events[j]
            out = forward(params, net_cfg, e.inside, e.outside)
            loss = anticipation_loss(out, labels[j], net_cfg.loss_scheme)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss is {loss} at epoch {epoch + 1}, sequence {e.event_id}")
            total += loss
            g = backward(params, net_cfg, out, labels[j])
            if batch is None:
                batch = g
            else:
                _add_into(batch, g)
            in_batch += 1
            if in_batch == cfg.batch_size:
                rmsprop_update(params, batch, state, cfg)
                batch, in_batch = None, 0
        if batch is not None:
            rmsprop_update(params, batch, state, cfg)
        history.epoch_loss.append(total / len(d.events))
        history.wall_time.append(time.perf_counter() - t0)
        log.info("epoch %d/%d loss %.6f (%.1fs)", epoch + 1, cfg.epochs, history.epoch_loss[-1], history.wall_time[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, params, history)
    history.checksum = params_checksum(params)
    return params, history


def fit(d: Dataset, net_cfg: NetConfig, cfg: TrainConfig, on_epoch=None) -> tuple[Model, TrainHistory]:
    """Augment ``d`` and train; returns a ready-to-use :class:`Model`."""
    aug = augment(d, cfg) if cfg.epochs > 0 else d
    params, history = train(aug, net_cfg, cfg, on_epoch=on_epoch)
    if cfg.loss_scheme is not None:
        net_cfg = replace(net_cfg, loss_scheme=cfg.loss_scheme)
    return Model(net_cfg, params, list(d.class_names)), history


# ---------------------------------------------------------------- gradient check

_ESCALATE = 1e-7


class _FiniteDifference:
    """Central differences of :func:`reference_loss` along one parameter entry."""

    def __init__(self, cfg, X, Z, k, scheme, step):
        self.args = (cfg, X, Z, k, scheme)
        self.step = step
        self._mp = None

    def __call__(self, ext, name, idx):
        cfg, X, Z, k, scheme = self.args
        theta = ext[name]
        h = np.longdouble(self.step)
        old = theta[idx]
        theta[idx] = old + h
        lp = reference_loss(cfg, ext, X, Z, k, scheme)
        theta[idx] = old - h
        lm = reference_loss(cfg, ext, X, Z, k, scheme)
        theta[idx] = old
        return float((lp - lm) / (2 * h))

    def precise(self, ext, name, idx):
        cfg, X, Z, k, scheme = self.args
        if self._mp is None:
            bk = mp_backend(40)
            self._mp = (bk, {n: bk.cast(a) for n, a in ext.items()}, bk.cast(X), bk.cast(Z))
        bk, arrs, Xm, Zm = self._mp
        theta = arrs[name]
        h = bk.one * self.step
        old = theta[idx]
        theta[idx] = old + h
        lp = reference_loss(cfg, arrs, Xm, Zm, k, scheme, bk)
        theta[idx] = old - h
        lm = reference_loss(cfg, arrs, Xm, Zm, k, scheme, bk)
        theta[idx] = old
        return float((lp - lm) / (2 * h))


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_checked: int


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)


def gradient_check_detail(net_cfg: NetConfig, seed: int, T: int = 5, step: float = 1e-6,
                          zero: bool = False, scale: float = 0.5, corrupt: bool = False) -> GradCheckResult:
    """Compare :func:`backward` with central differences on every parameter entry.

    The differenced loss comes from :func:`reference_loss`, an independent
    extended-precision implementation.

    A random sequence of length ``T`` and a random label are drawn from
    ``seed``; parameters are Uniform(-scale, scale) unless ``zero``.
    ``corrupt`` perturbs one analytic entry (harness self-test).
    """
    rng = np.random.default_rng(seed)
    params = zero_params(net_cfg) if zero else init_params(net_cfg, rng, scale)
    X = rng.standard_normal((T, net_cfg.inside_dim))
    Z = rng.standard_normal((T, net_cfg.outside_dim))
    k = int(rng.integers(net_cfg.num_classes))
    scheme = net_cfg.loss_scheme
    grads = backward(params, net_cfg, forward(params, net_cfg, X, Z), k, scheme)
    if corrupt:
        gb = grads.named()["b_y"]
        gb[0] += 1e-3 * (1.0 + abs(gb[0]))
    analytic = grads.named()
    # perturb extended-precision copies so the step itself is not rounded
    ext = {name: np.asarray(a, dtype=np.longdouble) for name, a in params.named().items()}
    fd = _FiniteDifference(net_cfg, X, Z, k, scheme, step)
    worst = (0.0, "", ())
    count = 0
    for name, theta in ext.items():
        a = analytic[name]
        for idx in np.ndindex(theta.shape):
            num = fd(ext, name, idx)
            err = float(relative_error(a[idx], num))
            if err > _ESCALATE:
                # long double cannot resolve this entry; redo it at 40 digits
                num = fd.precise(ext, name, idx)
                err = float(relative_error(a[idx], num))
            count += 1
            if err > worst[0]:
                worst = (err, name, idx)
    return GradCheckResult(worst[0], worst[1], worst[2], count)


def gradient_check(net_cfg: NetConfig, seed: int, **kw) -> float:
    """Worst relative error ``|a - n| / max(|a|, |n|, 1e-12)`` over all parameters."""
    return gradient_check_detail(net_cfg, seed, **kw).max_rel_error

