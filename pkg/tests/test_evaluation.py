import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusion_rnn.dataset import STRAIGHT, Dataset, Event, SyntheticConfig, generate_synthetic
from fusion_rnn.evaluation import (
    AnticipationResult,
    anticipate,
    compute_metrics,
    confusion_matrix,
    cross_validate,
    decide,
    default_grid,
    evaluate,
    event_trace,
    mean_se,
    render_confusion,
    row_normalized,
    sweep_traces,
    threshold_sweep,
)
from fusion_rnn.network import Model, NetConfig, forward, init_params, zero_params
from fusion_rnn.training import TrainConfig

LANE = ["left_lane_change", "right_lane_change", "straight"]
HAND_TRACE = [[0.2, 0.3, 0.5], [0.4, 0.5, 0.1], [0.8, 0.1, 0.1], [0.1, 0.1, 0.8], [0.1, 0.1, 0.8]]


def brute_force_fire(trace, p_th, straight):
    """Scan every step; collect all qualifying ones; the decision is the earliest."""
    hits = []
    for t, y in enumerate(trace, start=1):
        m = max(range(len(y)), key=lambda j: (y[j], -j))  # first maximum, like argmax
        if m != straight and y[m] > p_th:
            hits.append((t, m))
    return hits[0] if hits else None


def tally(preds, truths, names):
    """Independent metric oracle: plain loops over the pairs."""
    man = [m for m in names if m != STRAIGHT]
    tp = {m: sum(1 for p, y in zip(preds, truths) if p == y == m) for m in man}
    P = {m: sum(1 for p in preds if p == m) for m in man}
    N = {m: sum(1 for y in truths if y == m) for m in man}
    pr = sum((tp[m] / P[m]) if P[m] else 0.0 for m in man) / len(man)
    re = sum((tp[m] / N[m]) if N[m] else 0.0 for m in man) / len(man)
    f1 = 0.0 if pr + re == 0 else 2 * pr * re / (pr + re)
    cm = [[sum(1 for p, y in zip(preds, truths) if p == r and y == c) for c in names] for r in names]
    return pr, re, f1, cm


# ---- the threshold rule

def test_hand_trace():
    r = decide(HAND_TRACE, 0.7, LANE, "hand", 0.8)
    assert (r.predicted, r.fired_at, r.t_before_steps) == ("left_lane_change", 3, 2)
    assert abs(r.t_before_seconds - 1.6) < 1e-12


def test_straight_argmax_never_fires():
    # right lane change is over threshold but straight is the argmax: no firing
    r = decide([[0.0, 0.45, 0.55]], 0.4, LANE)
    assert r.predicted == STRAIGHT and r.fired_at is None and r.t_before_steps is None


def test_threshold_one_never_fires():
    r = decide([[0.0, 0.999999, 0.000001]] * 3, 1.0, LANE)
    assert r.predicted == STRAIGHT


def test_bad_threshold():
    for p in (0.0, -0.1, 1.2):
        with pytest.raises(ValueError):
            decide(HAND_TRACE, p, LANE)


@st.composite
def traces(draw):
    K = draw(st.integers(2, 5))
    T = draw(st.integers(1, 12))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    y = rng.dirichlet(np.ones(K) * draw(st.sampled_from([0.3, 1.0, 3.0])), size=T)
    return y, draw(st.floats(0.01, 1.0))


@settings(max_examples=300)
@given(traces())
def test_decide_matches_exhaustive_scan(tp):
    y, p_th = tp
    K = y.shape[1]
    names = [f"m{j}" for j in range(K - 1)] + [STRAIGHT]
    r = decide(y, p_th, names)
    ref = brute_force_fire(y.tolist(), p_th, K - 1)
    if ref is None:
        assert r.predicted == STRAIGHT and r.fired_at is None
    else:
        assert (r.fired_at, r.predicted, r.t_before_steps) == (ref[0], names[ref[1]], y.shape[0] - ref[0])
        assert y[ref[0] - 1].max() > p_th


@settings(max_examples=100)
@given(traces(), st.floats(0.01, 1.0))
def test_raising_threshold_never_adds_firings(tp, other):
    y, a = tp
    lo, hi = min(a, other), max(a, other)
    names = [f"m{j}" for j in range(y.shape[1] - 1)] + [STRAIGHT]
    fired_hi = decide(y, hi, names).fired_at
    fired_lo = decide(y, lo, names).fired_at
    if fired_hi is not None:
        assert fired_lo is not None and fired_lo <= fired_hi


def test_zero_model_never_fires():
    cfg = NetConfig(num_classes=5, hidden_dim=3, fusion_dim=3)
    d = generate_synthetic(SyntheticConfig(events_per_class=2))
    m = Model(cfg, zero_params(cfg), d.class_names)
    for e in d.events:
        assert anticipate(m, e, 0.25).predicted == STRAIGHT


def _model(seed, variant="fusion", K=5):
    cfg = NetConfig(variant=variant, hidden_dim=5, fusion_dim=4, num_classes=K)
    names = ["left_turn", "right_turn", "left_lane_change", "right_lane_change", "straight"]
    return Model(cfg, init_params(cfg, np.random.default_rng(seed), 1.5), names)


@pytest.mark.parametrize("variant", ["fusion", "simple"])
def test_streaming_equals_prefix_recompute(variant):
    m = _model(2, variant)
    d = generate_synthetic(SyntheticConfig(events_per_class=3, seed=6))
    for e in d.events:
        stream = m.stream()
        for t in range(e.T):
            y = stream.push(e.inside[t], e.outside[t])
            assert np.array_equal(y, m.predict_proba(e.inside[: t + 1], e.outside[: t + 1])[-1])


def test_anticipate_agrees_with_decide_on_trace():
    m = _model(4)
    d = generate_synthetic(SyntheticConfig(events_per_class=4, seed=2))
    for e in d.events:
        for p in (0.3, 0.5, 0.8):
            a = anticipate(m, e, p)
            b = decide(event_trace(m, e), p, m.class_names, e.event_id, e.seconds_per_step)
            assert (a.predicted, a.fired_at, a.t_before_steps) == (b.predicted, b.fired_at, b.t_before_steps)
            assert a.trace.shape[0] == (a.fired_at or e.T)


def test_anticipate_full_trace_keeps_decision():
    m = _model(4)
    e = generate_synthetic(SyntheticConfig(events_per_class=1, seed=2)).events[0]
    a = anticipate(m, e, 0.3)
    b = anticipate(m, e, 0.3, full_trace=True)
    assert (a.predicted, a.fired_at) == (b.predicted, b.fired_at)
    assert b.trace.shape[0] == e.T


# ---- metrics

def _res(preds, t_before=1):
    return [AnticipationResult(f"e{i}", p, None if p == STRAIGHT else 1, None if p == STRAIGHT else t_before,
                               None if p == STRAIGHT else 0.8 * t_before) for i, p in enumerate(preds)]


def test_worked_example():
    # TP = {2, 3}, P = {4, 3}, N = {4, 4} over the two lane maneuvers
    L, R, S = LANE
    pairs = [(L, L)] * 2 + [(L, R), (L, S)] + [(R, R)] * 3 + [(S, L)] * 2 + [(S, S)]
    preds, truths = zip(*pairs)
    m = compute_metrics(_res(preds), list(truths), LANE)
    assert m.tp[L] == 2 and m.tp[R] == 3 and m.predicted[L] == 4 and m.predicted[R] == 3
    assert m.actual[L] == 4 and m.actual[R] == 4
    assert m.precision == 0.75 and m.recall == 0.625
    assert m.f1 == 2 * 0.75 * 0.625 / 1.375


def test_perfect_and_silent():
    truths = ["left_lane_change", "right_lane_change", "straight", "left_lane_change"]
    m = compute_metrics(_res(truths), truths, LANE)
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)
    m = compute_metrics(_res([STRAIGHT] * 4), truths, LANE)
    assert m.recall == 0.0 and m.f1 == 0.0 and m.mean_ttm is None


def test_metrics_length_mismatch():
    with pytest.raises(ValueError):
        compute_metrics(_res(["straight"]), ["straight", "straight"], LANE)
    with pytest.raises(ValueError):
        confusion_matrix(_res(["straight"]), [], LANE)


@settings(max_examples=1000)
@given(st.integers(2, 5), st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=40))
def test_metrics_match_tally(K, pairs):
    names = [f"m{j}" for j in range(K - 1)] + [STRAIGHT]
    preds = [names[p % K] for p, _ in pairs]
    truths = [names[y % K] for _, y in pairs]
    m = compute_metrics(_res(preds), truths, names)
    pr, re, f1, cm = tally(preds, truths, names)
    assert (m.precision, m.recall, m.f1) == (pr, re, f1)
    assert m.confusion == cm
    assert sum(map(sum, m.confusion)) == len(pairs)
    assert 0 <= m.precision <= 1 and 0 <= m.recall <= 1 and 0 <= m.f1 <= 1


def test_ttm_only_over_correct_maneuvers():
    truths = ["left_lane_change", "right_lane_change", "left_lane_change"]
    res = [
        AnticipationResult("a", "left_lane_change", 1, 4, 3.2),
        AnticipationResult("b", "left_lane_change", 1, 9, 7.2),  # wrong: excluded
        AnticipationResult("c", "left_lane_change", 2, 2, 1.6),
    ]
    assert abs(compute_metrics(res, truths, LANE).mean_ttm - 2.4) < 1e-12


def test_confusion_hand_tally():
    L, R, S = LANE
    pairs = [(L, L), (L, R), (R, R), (S, L), (S, S), (R, S)]
    cm = confusion_matrix([p for p, _ in pairs], [y for _, y in pairs], LANE)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 1], [1, 0, 1]]
    assert np.allclose(np.diag(row_normalized(cm)), [0.5, 0.5, 0.5])
    assert "pred \\ true" in render_confusion(cm, LANE)


def test_all_straight_confusion():
    cm = confusion_matrix([STRAIGHT] * 3, LANE, LANE)
    assert cm[:2].sum() == 0 and cm[2].sum() == 3


@given(st.permutations(range(3)), st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=20))
def test_confusion_relabel_equivariance(perm, pairs):
    names = LANE
    relabeled = [names[i] for i in perm]
    cm = confusion_matrix([names[p] for p, _ in pairs], [names[y] for _, y in pairs], names)
    cm2 = confusion_matrix([names[p] for p, _ in pairs], [names[y] for _, y in pairs], relabeled)
    np.testing.assert_array_equal(cm2, cm[np.ix_(perm, perm)])


# ---- sweeps

def _events_from_traces(labels):
    return [Event(f"e{i}", y, np.zeros((1, 1)), np.zeros((1, 1))) for i, y in enumerate(labels)]


def test_sweep_hand_oracle():
    L, R, S = LANE
    traces = [
        np.array([[0.1, 0.1, 0.8], [0.95, 0.03, 0.02]]),  # L, fires at any p_th < 0.95
        np.array([[0.2, 0.7, 0.1]]),  # R, fires only while p_th < 0.7
        np.array([[0.5, 0.1, 0.4]]),  # S, false L firing while p_th < 0.5
    ]
    ev = _events_from_traces([L, R, S])
    sw = sweep_traces(traces, ev, [L, R, S], LANE, [0.4, 0.9])
    # p_th=0.4: preds L, R, L -> Pr = (1/2 + 1)/2, Re = 1; p_th=0.9: preds L, S, S -> Pr = (1 + 0)/2, Re = 1/2
    lo, hi = sw.points
    assert (lo.precision, lo.recall) == (0.75, 1.0)
    assert (hi.precision, hi.recall) == (0.5, 0.5)
    assert lo.f1 == 2 * 0.75 / 1.75 and hi.f1 == 0.5
    assert sw.best_threshold == 0.4


def test_sweep_tie_goes_to_larger_threshold():
    traces = [np.array([[0.9, 0.05, 0.05]])]
    ev = _events_from_traces(["left_lane_change"])
    sw = sweep_traces(traces, ev, ["left_lane_change"], LANE, [0.2, 0.5, 0.8])
    assert sw.best_threshold == 0.8


def test_single_point_sweep_equals_evaluate():
    m = _model(7)
    d = generate_synthetic(SyntheticConfig(events_per_class=3, seed=3))
    sw = threshold_sweep(m, d.events, [0.35])
    _, rep = evaluate(m, d.events, 0.35)
    p = sw.points[0]
    assert (p.f1, p.precision, p.recall, p.mean_ttm) == (rep.f1, rep.precision, rep.recall, rep.mean_ttm)


def test_sweep_grid_order_irrelevant():
    m = _model(7)
    d = generate_synthetic(SyntheticConfig(events_per_class=3, seed=3))
    g = default_grid()
    a = {p.p_th: p for p in threshold_sweep(m, d.events, g).points}
    b = {p.p_th: p for p in threshold_sweep(m, d.events, g[::-1]).points}
    assert a == b
    assert len(g) == 20 and g[0] == 0.05 and g[-1] == 1.0


def test_sweep_csv_shape():
    m = _model(1)
    d = generate_synthetic(SyntheticConfig(events_per_class=2))
    lines = threshold_sweep(m, d.events).to_csv().strip().split("\n")
    assert lines[0] == "p_th,F1,Pr,Re,TTM" and len(lines) == 21


# ---- cross-validation

def test_mean_se_hand():
    mu, se = mean_se([0.8, 0.9, 1.0])
    assert abs(mu - 0.9) < 1e-15 and abs(se - 0.1 / math.sqrt(3)) < 1e-15
    assert abs(se - 0.0577) < 1e-4
    assert mean_se([None, None]) == (None, None)


def _blocks(k=5, per=4):
    # class-pure, trivially separable blocks: lane maneuvers on opposite signs of one feature
    rng = np.random.default_rng(0)
    ev = []
    for i in range(k * per):
        lab = LANE[i % 3]
        sign = {"left_lane_change": 1.0, "right_lane_change": -1.0, "straight": 0.0}[lab]
        X = np.full((6, 2), 3.0 * sign)
        X[:, 1] = rng.normal(size=6) * 1e-3
        ev.append(Event(f"b{i}", lab, X, np.zeros((6, 1))))
    return Dataset(ev, 2, 1, LANE)


def test_cv_separable_blocks():
    # 30 events: with split seed 0 every held-out fold contains all three classes
    # (a fold missing a maneuver scores 0 on that term by construction)
    d = _blocks(per=6)
    cfg = NetConfig(inside_dim=2, outside_dim=1, hidden_dim=4, fusion_dim=4, num_classes=3)
    rep = cross_validate(d, cfg, TrainConfig(epochs=40, learning_rate=1e-2, seed=0), k=5)
    for f in rep.folds:
        assert f.metrics.precision == 1.0 and f.metrics.recall == 1.0
    assert rep.summary["precision"]["se"] == 0.0 and rep.summary["recall"]["mean"] == 1.0


def test_cv_deterministic_and_k_folds():
    d = generate_synthetic(SyntheticConfig(events_per_class=4, inside_dim=4, outside_dim=2, setting="lane"))
    cfg = NetConfig(inside_dim=4, outside_dim=2, hidden_dim=3, fusion_dim=3, num_classes=3)
    tc = TrainConfig(epochs=1, seed=2)
    a = cross_validate(d, cfg, tc, k=3)
    b = cross_validate(d, cfg, tc, k=3)
    assert a.to_dict() == b.to_dict() and len(a.folds) == 3
    with pytest.raises(ValueError):
        cross_validate(d, cfg, tc, k=1)
