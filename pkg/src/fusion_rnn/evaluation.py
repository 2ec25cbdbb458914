"""Streaming threshold anticipation, precision/recall/F1, sweeps and cross-validation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import STRAIGHT, Dataset, Event, kfold_split
from .network import Model, NetConfig

log = logging.getLogger(__name__)


def default_grid() -> list[float]:
    return [round(0.05 * i, 10) for i in range(1, 21)]


def _check_threshold(p_th: float) -> None:
    if not (0.0 < p_th <= 1.0):
        raise ValueError(f"p_th must lie in (0, 1], got {p_th}")


@dataclass
class AnticipationResult:
    event_id: str
    predicted: str
    fired_at: int | None = None  # 1-based step
    t_before_steps: int | None = None
    t_before_seconds: float | None = None
    trace: np.ndarray | None = None  # (steps seen, K)

    def to_dict(self, with_trace: bool = False) -> dict:
        d = {
            "event_id": self.event_id,
            "predicted": self.predicted,
            "fired_at": self.fired_at,
            "t_before_steps": self.t_before_steps,
            "t_before_seconds": self.t_before_seconds,
        }
        if with_trace and self.trace is not None:
            d["trace"] = self.trace.tolist()
        return d


def _fires(y: np.ndarray, straight: int, p_th: float) -> int | None:
    m = int(np.argmax(y))
    if m != straight and y[m] > p_th:
        return m
    return None


def decide(trace, p_th: float, class_names, event_id: str = "", seconds_per_step: float = 0.8) -> AnticipationResult:
    """Threshold rule applied to a precomputed probability trace (rows = steps)."""
    _check_threshold(p_th)
    trace = np.asarray(trace, dtype=np.float64)
    straight = list(class_names).index(STRAIGHT)
    T = trace.shape[0]
    for t in range(T):
        m = _fires(trace[t], straight, p_th)
        if m is not None:
            tb = T - (t + 1)
            return AnticipationResult(event_id, class_names[m], t + 1, tb, tb * seconds_per_step, trace[: t + 1])
    return AnticipationResult(event_id, STRAIGHT, trace=trace)


def anticipate(model, event: Event, p_th: float, seconds_per_step: float | None = None,
               full_trace: bool = False) -> AnticipationResult:
    """Observe the event one step at a time and fire on the first confident maneuver.

    At step ``t`` the most probable class fires if it is not ``straight`` and
    its probability exceeds ``p_th``; ``t_before = T - t``. If nothing fires
    the prediction is ``straight``. The recurrent state is carried forward,
    never recomputed from the start. With ``full_trace`` the remaining steps
    are still evaluated (for display) without changing the decision.
    """
    _check_threshold(p_th)
    sps = event.seconds_per_step if seconds_per_step is None else seconds_per_step
    names = list(model.class_names)
    straight = names.index(STRAIGHT)
    stream = model.stream()
    T = event.T
    rows = []
    result = None
    for t in range(T):
        y = stream.push(event.inside[t], event.outside[t])
        rows.append(y)
        if result is None:
            m = _fires(y, straight, p_th)
            if m is not None:
                tb = T - (t + 1)
                result = AnticipationResult(event.event_id, names[m], t + 1, tb, tb * sps)
                if not full_trace:
                    break
    if result is None:
        result = AnticipationResult(event.event_id, STRAIGHT)
    result.trace = np.array(rows)
    return result


def event_trace(model, event: Event) -> np.ndarray:
    """Per-step probabilities over the whole event, via the streaming path."""
    stream = model.stream()
    return np.array([stream.push(event.inside[t], event.outside[t]) for t in range(event.T)])


# ---------------------------------------------------------------- metrics

def confusion_matrix(results, truths, class_names) -> np.ndarray:
    """Counts with rows = predicted class, columns = true class."""
    if len(results) != len(truths):
        raise ValueError(f"{len(results)} results but {len(truths)} truths")
    names = list(class_names)
    cm = np.zeros((len(names), len(names)), dtype=np.int64)
    for r, y in zip(results, truths):
        pred = r.predicted if isinstance(r, AnticipationResult) else r
        cm[names.index(pred), names.index(y)] += 1
    return cm


def row_normalized(cm: np.ndarray) -> np.ndarray:
    """Each row divided by its sum; the diagonal then holds per-prediction precision."""
    s = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, s, out=np.zeros(cm.shape), where=s > 0)


def render_confusion(cm: np.ndarray, class_names, normalized: bool = False) -> str:
    names = list(class_names)
    vals = row_normalized(cm) if normalized else cm
    cells = [[f"{v:.2f}" if normalized else str(int(v)) for v in row] for row in vals]
    w0 = max(len("pred \\ true"), *(len(n) for n in names))
    w = max(max(len(n) for n in names), max(len(c) for row in cells for c in row))
    lines = ["pred \\ true".ljust(w0) + " " + " ".join(n.rjust(w) for n in names)]
    for n, row in zip(names, cells):
        lines.append(n.ljust(w0) + " " + " ".join(c.rjust(w) for c in row))
    return "\n".join(lines)


@dataclass
class MetricsReport:
    class_names: list[str]
    tp: dict[str, int]
    predicted: dict[str, int]  # P_m, times m was predicted
    actual: dict[str, int]  # N_m, instances of m
    precision: float
    recall: float
    f1: float
    mean_ttm: float | None  # seconds, over correct maneuver predictions
    confusion: list[list[int]]
    n_events: int
    p_th: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def f1_score(pr: float, re: float) -> float:
    return 0.0 if pr + re == 0 else 2.0 * pr * re / (pr + re)


def compute_metrics(results, truths, class_names, p_th: float | None = None) -> MetricsReport:
    """Precision and recall averaged over the non-straight maneuvers.

    A maneuver never predicted (P_m = 0) contributes a precision term of 0;
    one with no instances (N_m = 0) contributes a recall term of 0.
    Time-to-maneuver is averaged over correctly anticipated maneuvers.
    """
    if len(results) != len(truths):
        raise ValueError(f"{len(results)} results but {len(truths)} truths")
    names = list(class_names)
    cm = confusion_matrix(results, truths, names)
    tp = {m: int(cm[i, i]) for i, m in enumerate(names)}
    P = {m: int(cm[i, :].sum()) for i, m in enumerate(names)}
    N = {m: int(cm[:, i].sum()) for i, m in enumerate(names)}
    maneuvers = [m for m in names if m != STRAIGHT]
    pr = sum(tp[m] / P[m] if P[m] else 0.0 for m in maneuvers) / len(maneuvers)
    re = sum(tp[m] / N[m] if N[m] else 0.0 for m in maneuvers) / len(maneuvers)
    ttm = [r.t_before_seconds for r, y in zip(results, truths)
           if r.predicted == y and y != STRAIGHT and r.t_before_seconds is not None]
    return MetricsReport(
        names, tp, P, N, pr, re, f1_score(pr, re),
        (sum(ttm) / len(ttm)) if ttm else None,
        cm.tolist(), len(results), p_th,
    )


# ---------------------------------------------------------------- threshold sweep

@dataclass
class SweepPoint:
    p_th: float
    f1: float
    precision: float
    recall: float
    mean_ttm: float | None


@dataclass
class SweepResult:
    points: list[SweepPoint]
    best_threshold: float
    best: SweepPoint

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p_th", "F1", "Pr", "Re", "TTM"])
        for p in self.points:
            w.writerow([repr(p.p_th), repr(p.f1), repr(p.precision), repr(p.recall),
                        "" if p.mean_ttm is None else repr(p.mean_ttm)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"points": [asdict(p) for p in self.points], "best_threshold": self.best_threshold}


def sweep_traces(traces, events, truths, class_names, grid, seconds_per_step=None) -> SweepResult:
    """Sweep over precomputed traces; the best F1 wins, ties go to the larger threshold."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty threshold grid")
    points = []
    for p_th in grid:
        res = [
            decide(tr, p_th, class_names, e.event_id, e.seconds_per_step if seconds_per_step is None else seconds_per_step)
            for tr, e in zip(traces, events)
        ]
        m = compute_metrics(res, truths, class_names, p_th)
        points.append(SweepPoint(p_th, m.f1, m.precision, m.recall, m.mean_ttm))
    best = max(points, key=lambda p: (p.f1, p.p_th))
    return SweepResult(points, best.p_th, best)


def threshold_sweep(model, events, grid=None, seconds_per_step=None) -> SweepResult:
    events = list(events)
    grid = default_grid() if grid is None else list(grid)
    for p in grid:
        _check_threshold(p)
    traces = [event_trace(model, e) for e in events]
    return sweep_traces(traces, events, [e.label for e in events], model.class_names, grid, seconds_per_step)


def evaluate(model, events, p_th: float, seconds_per_step=None):
    """``(results, MetricsReport)`` for a fixed threshold."""
    events = list(events)
    results = [anticipate(model, e, p_th, seconds_per_step) for e in events]
    return results, compute_metrics(results, [e.label for e in events], model.class_names, p_th)


# ---------------------------------------------------------------- cross-validation

def mean_se(values) -> tuple[float | None, float | None]:
    """Mean and standard error ``std(ddof=1) / sqrt(n)``; None entries are skipped."""
    v = [x for x in values if x is not None]
    if not v:
        return None, None
    if len(v) == 1:
        return float(v[0]), 0.0
    a = np.asarray(v, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(len(a)))


@dataclass
class FoldResult:
    fold: int
    p_th: float
    metrics: MetricsReport
    train_checksum: str


@dataclass
class CvReport:
    k: int
    folds: list[FoldResult]
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "summary": self.summary,
            "folds": [
                {"fold": f.fold, "p_th": f.p_th, "train_checksum": f.train_checksum, "metrics": f.metrics.to_dict()}
                for f in self.folds
            ],
        }


def _summarize(folds: list[FoldResult]) -> dict:
    out = {}
    for key, get in (("precision", lambda m: m.precision), ("recall", lambda m: m.recall),
                     ("f1", lambda m: m.f1), ("mean_ttm", lambda m: m.mean_ttm)):
        mu, se = mean_se([get(f.metrics) for f in folds])
        out[key] = {"mean": mu, "se": se}
    return out


def run_fold(d: Dataset, split, fold: int, net_cfg: NetConfig, train_cfg, grid, seconds_per_step=None) -> FoldResult:
    from .training import fit

    train_d, test_d = split.split(d, fold)
    try:
        model, history = fit(train_d, net_cfg, train_cfg)
    except Exception as exc:
        raise RuntimeError(f"training failed on fold {fold}: {exc}") from exc
    # threshold picked on the training folds only, never on the held-out one
    sweep = threshold_sweep(model, train_d.events, grid, seconds_per_step)
    _, m = evaluate(model, test_d.events, sweep.best_threshold, seconds_per_step)
    log.info("fold %d: p_th=%.2f Pr=%.3f Re=%.3f F1=%.3f", fold, sweep.best_threshold, m.precision, m.recall, m.f1)
    return FoldResult(fold, sweep.best_threshold, m, history.checksum)


def cross_validate(d: Dataset, net_cfg: NetConfig, train_cfg, k: int = 5, grid=None, seed: int | None = None,
                   jobs: int = 1, seconds_per_step=None) -> CvReport:
    """k-fold CV: augment + train on k-1 folds, pick p_th there, test on the held-out fold."""
    if k < 2:
        raise ValueError("k must be >= 2")
    grid = default_grid() if grid is None else list(grid)
    split = kfold_split(d, k, train_cfg.seed if seed is None else seed)
    if jobs > 1:
        from joblib import Parallel, delayed

        folds = Parallel(n_jobs=jobs)(
            delayed(run_fold)(d, split, f, net_cfg, train_cfg, grid, seconds_per_step) for f in range(k)
        )
    else:
        folds = [run_fold(d, split, f, net_cfg, train_cfg, grid, seconds_per_step) for f in range(k)]
    return CvReport(k, list(folds), _summarize(list(folds)))

