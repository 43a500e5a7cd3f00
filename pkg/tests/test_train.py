import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from swgridnet import ops
from swgridnet.data import Dataset, SynthSpec, generate_synth
from swgridnet.errors import ConfigurationError, DivergenceError, UsageError
from swgridnet.model import NetworkConfig, build_network
from swgridnet.tensor import Tensor
from swgridnet.train import (
    OptimizerState,
    TrainConfig,
    augment_batch,
    crop_flip,
    cycle_boundaries,
    ensemble_predict,
    evaluate,
    sgd_momentum_step,
    sgdr_lr,
    train_epoch,
)

TINY = NetworkConfig(dims=2, side=2, base_channels=4, num_classes=2, image_size=8)


def tiny_data(n=16, seed=0, size=8):
    r = np.random.default_rng(seed)
    return Dataset(r.random((n, 3, size, size), dtype=np.float32), np.arange(n) % 2, 2)


# learning-rate schedule

def test_sgdr_defaults():
    cfg = TrainConfig()
    assert sgdr_lr(cfg, 0) == 0.2
    assert cycle_boundaries(cfg) == [10, 30, 70, 150, 310, 630]
    assert sum(10 * 2**i for i in range(6)) == cfg.total_epochs


@pytest.mark.parametrize("start,length", [(0, 10), (10, 20), (30, 40), (70, 80), (150, 160), (310, 320)])
def test_sgdr_cycle_structure(start, length):
    cfg = TrainConfig(lr_min=0.01)
    assert sgdr_lr(cfg, start) == cfg.lr_max
    assert abs(sgdr_lr(cfg, start + length / 2) - (cfg.lr_max + cfg.lr_min) / 2) < 1e-12
    assert abs(sgdr_lr(cfg, start + length - 1e-9) - cfg.lr_min) < 1e-12


@given(st.integers(1, 20), st.integers(1, 4), st.floats(0, 1), st.floats(0, 300))
def test_sgdr_within_bounds_and_restarts(t0, tmult, lo_frac, epoch):
    cfg = TrainConfig(lr_max=0.5, lr_min=0.5 * lo_frac, T_0=t0, T_mult=tmult)
    lr = sgdr_lr(cfg, epoch)
    assert cfg.lr_min - 1e-15 <= lr <= cfg.lr_max + 1e-15
    start, length = 0, t0
    while start < 300:
        assert sgdr_lr(cfg, start) == pytest.approx(cfg.lr_max, abs=1e-15)
        start, length = start + length, length * tmult


@given(st.integers(1, 12), st.integers(1, 3), st.floats(0, 0.999))
def test_sgdr_continuous_within_cycle(t0, tmult, frac):
    cfg = TrainConfig(T_0=t0, T_mult=tmult)
    e = frac * t0
    h = 1e-7
    assert abs(sgdr_lr(cfg, e + h) - sgdr_lr(cfg, e)) < 1e-5


def test_per_epoch_lr_recorded():
    net = build_network(TINY)
    cfg = TrainConfig(batch_size=8, augment=False)
    row = train_epoch(net, tiny_data(), cfg, OptimizerState(), 3)
    assert row.lr == sgdr_lr(cfg, 3)


# optimizer

def named(*vals):
    return [(f"p{i}.weight", Tensor(np.array([v], np.float64))) for i, v in enumerate(vals)]


def test_momentum_step_algebra():
    params = named(1.0)
    cfg = TrainConfig(momentum=0.9, weight_decay=0.0)
    state = OptimizerState()
    grads = {"p0.weight": np.array([1.0])}
    sgd_momentum_step(params, grads, state, 0.1, cfg)
    assert state.velocity["p0.weight"][0] == pytest.approx(1.0)
    assert params[0][1].data[0] == pytest.approx(0.9)
    sgd_momentum_step(params, grads, state, 0.1, cfg)
    assert state.velocity["p0.weight"][0] == pytest.approx(1.9)
    assert params[0][1].data[0] == pytest.approx(0.71)


def test_weight_decay_only_on_weights():
    cfg = TrainConfig(weight_decay=1e-4)
    w = Tensor(np.array([1.0]))
    gamma = Tensor(np.array([1.0]))
    grads = {"a.weight": np.zeros(1), "a.gamma": np.zeros(1)}
    sgd_momentum_step([("a.weight", w), ("a.gamma", gamma)], grads, OptimizerState(), 0.2, cfg)
    assert w.data[0] == 1 - 0.2 * 1e-4
    assert gamma.data[0] == 1.0


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=5), st.floats(0, 1))
def test_plain_gradient_descent_when_momentum_and_decay_off(vals, lr):
    cfg = TrainConfig(momentum=0.0, weight_decay=0.0)
    params = named(*vals)
    grads = {n: np.array([v * 0.5]) for (n, _), v in zip(params, vals)}
    state = OptimizerState()
    for _ in range(2):
        before = [t.data.copy() for _, t in params]
        sgd_momentum_step(params, grads, state, lr, cfg)
        for b, (n, t) in zip(before, params):
            np.testing.assert_array_equal(t.data, b - lr * grads[n])


def test_missing_gradient_is_usage_error():
    with pytest.raises(UsageError):
        sgd_momentum_step(named(1.0), None, OptimizerState(), 0.1, TrainConfig())


# augmentation

def test_augment_disabled_is_identity():
    x = np.random.default_rng(0).random((4, 3, 32, 32))
    assert augment_batch(x, np.random.default_rng(1), enabled=False) is x


def test_center_crop_without_flip_is_identity():
    x = np.random.default_rng(0).random((2, 3, 32, 32))
    np.testing.assert_array_equal(crop_flip(x, [(4, 4), (4, 4)], [False, False]), x)


def test_crop_flip_geometry():
    x = np.arange(2 * 32 * 32, dtype=float).reshape(1, 2, 32, 32)
    flipped = crop_flip(x, [(4, 4)], [True])
    np.testing.assert_array_equal(flipped, x[:, :, :, ::-1])
    shifted = crop_flip(x, [(0, 0)], [False])
    np.testing.assert_array_equal(shifted[0, :, 4:, 4:], x[0, :, :28, :28])
    assert np.all(shifted[0, :, :4, :] == 0)


def test_augment_is_seeded():
    x = np.random.default_rng(0).random((8, 3, 32, 32))
    a = augment_batch(x, np.random.default_rng(42))
    b = augment_batch(x, np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)
    assert a.shape == x.shape and a.min() >= 0 and a.max() <= 1


# epochs

def test_one_epoch_step_count(monkeypatch):
    from swgridnet import train

    calls = []
    real = train.sgd_momentum_step
    monkeypatch.setattr(train, "sgd_momentum_step", lambda *a: calls.append(1) or real(*a))
    net = build_network(TINY)
    train_epoch(net, tiny_data(16), TrainConfig(batch_size=8), OptimizerState(), 0)
    assert len(calls) == 2


def test_last_partial_batch_is_kept(monkeypatch):
    from swgridnet import train

    sizes = []
    real = train.augment_batch
    monkeypatch.setattr(train, "augment_batch", lambda x, *a: sizes.append(len(x)) or real(x, *a))
    train_epoch(build_network(TINY), tiny_data(20), TrainConfig(batch_size=8), OptimizerState(), 0)
    assert sizes == [8, 8, 4]


def test_divergence_aborts():
    net = build_network(TINY)
    data = tiny_data()
    data.images[0, 0, 0, 0] = np.nan
    with pytest.raises(DivergenceError):
        train_epoch(net, data, TrainConfig(batch_size=16, augment=False), OptimizerState(), 0)


def test_epoch_is_reproducible():
    rows, weights = [], []
    for _ in range(2):
        net = build_network(TINY, seed=3)
        cfg = TrainConfig(batch_size=4, seed=11)
        state = OptimizerState()
        r = [train_epoch(net, tiny_data(), cfg, state, e, tiny_data(8, 1), clock=None) for e in range(2)]
        rows.append(r)
        weights.append(np.concatenate([t.data.ravel() for t in net.parameters()]))
    assert rows[0] == rows[1]
    np.testing.assert_array_equal(weights[0], weights[1])


# evaluation

def test_evaluate_zero_head_predicts_class_zero():
    net = build_network(TINY)
    net.head_weight.data[...] = 0
    net.head_bias.data[...] = 0
    loss, acc = evaluate(net, tiny_data(16))
    assert acc == 0.5  # balanced set, ties go to class 0
    assert abs(loss - math.log(2)) < 1e-6


def test_evaluate_is_pure():
    net = build_network(TINY, seed=4)
    train_epoch(net, tiny_data(), TrainConfig(batch_size=8), OptimizerState(), 0)
    before = [t.data.copy() for t in net.parameters()] + [b.copy() for _, b in net.named_buffers()]
    first = evaluate(net, tiny_data(12, 5))
    second = evaluate(net, tiny_data(12, 5))
    after = [t.data for t in net.parameters()] + [b for _, b in net.named_buffers()]
    assert first == second
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a, b)
    assert net.training


def test_synthetic_two_class_training_fits():
    cfg = NetworkConfig(dims=2, side=2, base_channels=4, num_classes=2, image_size=16)
    train_set, _ = generate_synth(SynthSpec(samples_per_class=32, image_size=16))
    net = build_network(cfg, seed=0)
    tc = TrainConfig(batch_size=16, augment=False, T_0=10)
    state = OptimizerState()
    accs = [train_epoch(net, train_set, tc, state, e).train_acc for e in range(8)]
    assert max(accs) >= 0.95


# ensembles

def test_ensemble_of_copies_matches_single_model():
    net = build_network(TINY, seed=9)
    x = tiny_data(10).images
    net.eval()
    single = net(x).data.argmax(axis=1)
    net.train()
    labels, probs = ensemble_predict([net, net, net], x)
    np.testing.assert_array_equal(labels, single)
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)


def test_ensemble_averages_probabilities():
    class Fixed:
        def __init__(self, p):
            self.logits = np.log(np.array([p]))
            self.config = NetworkConfig(num_classes=2)
            self.training = False
            self.dtype = np.float64

        def eval(self):
            return self

        def train(self, mode=True):
            return self

        def __call__(self, images):
            return Tensor(self.logits)

    labels, probs = ensemble_predict([Fixed([0.6, 0.4]), Fixed([0.2, 0.8])], np.zeros((1, 3, 8, 8)))
    np.testing.assert_allclose(probs, [[0.4, 0.6]])
    assert labels.tolist() == [1]


def test_ensemble_rejects_mixed_class_counts():
    a = build_network(TINY)
    b = build_network(NetworkConfig(dims=2, side=2, base_channels=4, num_classes=3, image_size=8))
    with pytest.raises(ConfigurationError):
        ensemble_predict([a, b], tiny_data(2).images)


@pytest.mark.parametrize("kw", [dict(lr_min=0.5), dict(T_0=0), dict(T_mult=0), dict(batch_size=0)])
def test_invalid_train_configs(kw):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kw)


def test_loss_equals_log_k_for_uniform_logits():
    loss = ops.softmax_cross_entropy(Tensor(np.zeros((4, 7))), [0, 1, 2, 3])
    assert abs(loss.item() - math.log(7)) < 1e-6
