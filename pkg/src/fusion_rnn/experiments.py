"""Desk-scale benchmark protocol shared by ``scripts/`` and the acceptance suite.

One run: synthetic data (fixed seed), one held-out fold, augment + train on
the rest, choose p_th on the training originals, score the held-out fold.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import STRAIGHT, SyntheticConfig, generate_synthetic, kfold_split
from .evaluation import AnticipationResult, compute_metrics, evaluate, threshold_sweep
from .network import NetConfig
from .training import TrainConfig, fit

ARCHITECTURES = {
    "F-RNN-EL": ("fusion", "exponential"),
    "F-RNN-UL": ("fusion", "uniform"),
    "S-RNN": ("simple", "exponential"),
}


@dataclass
class HoldoutRun:
    arch: str
    seed: int
    p_th: float
    f1: float
    precision: float
    recall: float
    mean_ttm: float | None
    train_seconds: float
    total_seconds: float


def benchmark_data(data_seed: int = 1, events_per_class: int = 200):
    return generate_synthetic(SyntheticConfig(events_per_class=events_per_class, seed=data_seed))


def holdout_run(d, arch: str, seed: int, epochs: int = 40, hidden: int = 32, fold: int = 0,
                split_seed: int = 1) -> HoldoutRun:
    t0 = time.perf_counter()
    variant, loss = ARCHITECTURES[arch]
    train_d, test_d = kfold_split(d, 5, split_seed).split(d, fold)
    net = NetConfig(variant=variant, loss_scheme=loss, hidden_dim=hidden, fusion_dim=hidden,
                    inside_dim=d.inside_dim, outside_dim=d.outside_dim, num_classes=len(d.class_names))
    model, _ = fit(train_d, net, TrainConfig(epochs=epochs, seed=seed))
    t_train = time.perf_counter() - t0
    sweep = threshold_sweep(model, train_d.events)
    _, m = evaluate(model, test_d.events, sweep.best_threshold)
    return HoldoutRun(arch, seed, sweep.best_threshold, m.f1, m.precision, m.recall, m.mean_ttm,
                      t_train, time.perf_counter() - t0)


def chance_f1(d, draws: int = 200, seed: int = 0) -> float:
    """Mean F1 of uniformly random class guesses on ``d`` (the chance baseline)."""
    rng = np.random.default_rng(seed)
    truths = [e.label for e in d.events]
    names = list(d.class_names)
    scores = []
    for _ in range(draws):
        preds = [names[j] for j in rng.integers(len(names), size=len(truths))]
        scores.append(compute_metrics(_as_results(preds), truths, names).f1)
    return float(np.mean(scores))


def _as_results(preds):
    return [AnticipationResult(f"r{i}", p) if p == STRAIGHT else AnticipationResult(f"r{i}", p, 1, 0, 0.0)
            for i, p in enumerate(preds)]


def summarize(runs: list[HoldoutRun]) -> dict:
    out = {}
    for arch in ARCHITECTURES:
        f = [r.f1 for r in runs if r.arch == arch]
        if f:
            out[arch] = {"mean_f1": float(np.mean(f)), "f1": f, "n": len(f)}
    return out


def as_dicts(runs):
    return [asdict(r) for r in runs]
