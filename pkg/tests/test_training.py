import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusion_rnn.dataset import Dataset, Event, SyntheticConfig, generate_synthetic
from fusion_rnn.network import NetConfig, init_params, zero_params
from fusion_rnn.training import (
    RmspropState,
    TrainConfig,
    TrainingDiverged,
    augment,
    fit,
    gradient_check,
    gradient_check_detail,
    params_checksum,
    rmsprop_update,
    train,
)

SMALL = dict(inside_dim=4, outside_dim=2, hidden_dim=3, fusion_dim=3, num_classes=5)


def toy_dataset(n, rng, T_range=(5, 12), dims=(4, 2)):
    labels = ["left_turn", "right_turn", "left_lane_change", "right_lane_change", "straight"]
    ev = []
    for j in range(n):
        T = int(rng.integers(T_range[0], T_range[1] + 1))
        ev.append(Event(f"e{j}", labels[j % 5], rng.normal(size=(T, dims[0])), rng.normal(size=(T, dims[1]))))
    return Dataset(ev, dims[0], dims[1], labels)


def contained(sub, src):
    s, stop = sub.span
    return (
        sub.label == src.label
        and stop - s == sub.T
        and np.array_equal(sub.inside, src.inside[s:stop])
        and np.array_equal(sub.outside, src.outside[s:stop])
    )


# ---- augmentation

def test_augment_700_gives_2250(rng):
    d = toy_dataset(700, rng)
    a = augment(d, TrainConfig(augmentation_factor=3.214, seed=1))
    assert abs(len(a) - 2250) <= 1
    assert a.events[:700] == d.events


def test_augment_factor_one_is_identity(rng):
    d = toy_dataset(30, rng)
    a = augment(d, TrainConfig(augmentation_factor=1.0))
    assert [e.event_id for e in a.events] == [e.event_id for e in d.events]


@settings(max_examples=25)
@given(st.integers(1, 60), st.floats(1.0, 5.0), st.integers(0, 1000), st.integers(2, 6))
def test_augment_size_and_containment(n, factor, seed, min_len):
    rng = np.random.default_rng(seed)
    d = toy_dataset(n, rng, (min_len, min_len + 6))
    a = augment(d, TrainConfig(augmentation_factor=factor, min_subseq_len=min_len, seed=seed))
    assert abs(len(a) - round(factor * n)) <= 1
    by_id = {e.event_id: e for e in d.events}
    for e in a.events[n:]:
        assert e.T >= min_len
        assert contained(e, by_id[e.source_id])


def test_augment_deterministic(rng):
    d = toy_dataset(20, rng)
    cfg = TrainConfig(seed=5)
    a, b = augment(d, cfg), augment(d, cfg)
    assert [e.event_id for e in a.events] == [e.event_id for e in b.events]


def test_augment_skips_short_events(rng, caplog):
    d = toy_dataset(10, rng, (6, 9))
    short = Event("short", "straight", np.zeros((3, 4)), np.zeros((3, 2)))
    d = d.subset(d.events + [short])
    with caplog.at_level(logging.WARNING):
        a = augment(d, TrainConfig(min_subseq_len=5))
    assert "short" in caplog.text
    assert all(e.source_id != "short" for e in a.events)


def test_augment_empty_dataset():
    with pytest.raises(ValueError):
        augment(Dataset([], 4, 2, ["straight"]), TrainConfig())


# ---- RMSprop

def _one_param_state(theta, g):
    cfg = NetConfig(**SMALL)
    p = zero_params(cfg)
    p.b_y[:] = theta
    grads = zero_params(cfg)
    grads.b_y[:] = g
    return p, grads, RmspropState.zeros(p)


def test_rmsprop_zero_gradient(rng):
    cfg = NetConfig(**SMALL)
    p = init_params(cfg, rng)
    before = p.copy()
    state = RmspropState.zeros(p)
    for v in state.acc.values():
        v[...] = 2.0
    rmsprop_update(p, zero_params(cfg), state, TrainConfig())
    for k, v in p.named().items():
        assert np.array_equal(v, before.named()[k])
    assert all(np.all(v == 2.0 * 0.9) for v in state.acc.values())


def test_rmsprop_first_step():
    p, g, s = _one_param_state(0.0, 1.0)
    cfg = TrainConfig(learning_rate=1e-3, rmsprop_decay=0.9, rmsprop_epsilon=0.0)
    rmsprop_update(p, g, s, cfg)
    assert abs(s.acc["b_y"][0] - 0.1) < 1e-16
    assert abs(p.b_y[0] - (-1e-3 / math.sqrt(0.1))) < 1e-15
    assert abs(p.b_y[0] / 1e-3 + 3.16227766) < 1e-8


def test_rmsprop_step_tends_to_lr_sign():
    p, g, s = _one_param_state(0.0, -0.37)
    cfg = TrainConfig(learning_rate=1e-2)
    prev = 0.0
    for _ in range(500):
        rmsprop_update(p, g, s, cfg)
        step, prev = p.b_y[0] - prev, p.b_y[0]
    assert abs(step - 1e-2) / 1e-2 < 0.01


def test_rmsprop_nonfinite_names_parameter():
    p, g, s = _one_param_state(0.0, 1.0)
    g.b_y[1] = np.nan
    with pytest.raises(ValueError, match="b_y"):
        rmsprop_update(p, g, s, TrainConfig())


@given(st.floats(0, 10), st.floats(-10, 10), st.floats(0.01, 0.99))
def test_rmsprop_accumulator_bound(acc0, g, rho):
    p, grads, s = _one_param_state(0.0, g)
    s.acc["b_y"][:] = acc0
    rmsprop_update(p, grads, s, TrainConfig(rmsprop_decay=rho))
    assert 0.0 <= s.acc["b_y"][0] <= max(acc0, g * g) * (1 + 1e-15)


# ---- training loop

def test_epochs_zero_returns_initialization():
    d = generate_synthetic(SyntheticConfig(events_per_class=4, inside_dim=4, outside_dim=2))
    cfg = NetConfig(**SMALL)
    params, hist = train(d, cfg, TrainConfig(epochs=0, seed=9))
    ref = init_params(cfg, np.random.default_rng(9), 0.08)
    assert params_checksum(params) == params_checksum(ref)
    assert hist.epoch_loss == []


def test_training_is_deterministic():
    d = generate_synthetic(SyntheticConfig(events_per_class=6, inside_dim=4, outside_dim=2))
    cfg = NetConfig(**SMALL)
    tc = TrainConfig(epochs=2, seed=3, learning_rate=1e-3)
    m1, h1 = fit(d, cfg, tc)
    m2, h2 = fit(d, cfg, tc)
    assert h1.to_dict() == h2.to_dict()
    for k, v in m1.params.named().items():
        assert np.array_equal(v, m2.params.named()[k])


def test_loss_decreases_on_separable_data():
    d = generate_synthetic(SyntheticConfig(events_per_class=30, noise_std=0.1, seed=1))
    cfg = NetConfig(hidden_dim=16, fusion_dim=16)
    _, hist = train(d, cfg, TrainConfig(epochs=30, seed=1))
    first = hist.epoch_loss[:5]
    assert all(b < a for a, b in zip(first, first[1:])), first
    assert len(hist.epoch_loss) == 30 and all(math.isfinite(v) for v in hist.epoch_loss)


def test_divergence_is_reported():
    d = generate_synthetic(SyntheticConfig(events_per_class=2, inside_dim=4, outside_dim=2))
    cfg = NetConfig(**SMALL)
    p = init_params(cfg, np.random.default_rng(0))
    p.W_y[0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(d, cfg, TrainConfig(epochs=1), params=p)


def test_dimension_mismatch():
    d = generate_synthetic(SyntheticConfig(events_per_class=2))
    with pytest.raises(ValueError, match="dims"):
        train(d, NetConfig(**SMALL), TrainConfig(epochs=1))


def test_train_config_validation():
    for bad in (dict(learning_rate=0), dict(rmsprop_decay=1.0), dict(augmentation_factor=0.5)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


# ---- gradient check harness

def test_gradient_check_examples():
    tiny = dict(inside_dim=3, outside_dim=2, hidden_dim=4, fusion_dim=4, num_classes=3)
    assert gradient_check(NetConfig(variant="fusion", loss_scheme="exponential", **tiny), 3) < 1e-5
    assert gradient_check(NetConfig(variant="simple", loss_scheme="uniform", **tiny), 4) < 1e-5


@pytest.mark.parametrize("variant", ["fusion", "simple"])
def test_gradient_check_at_zero(variant):
    cfg = NetConfig(variant=variant, inside_dim=3, outside_dim=2, hidden_dim=2, fusion_dim=2, num_classes=3)
    assert gradient_check_detail(cfg, 0, zero=True).max_rel_error < 1e-7


def test_gradient_check_catches_corruption():
    cfg = NetConfig(inside_dim=2, outside_dim=2, hidden_dim=2, fusion_dim=2, num_classes=3)
    r = gradient_check_detail(cfg, 0, corrupt=True)
    assert r.max_rel_error > 1e-5 and r.worst_param == "b_y"
