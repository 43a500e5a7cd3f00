"""Momentum SGD with cosine warm restarts, augmentation, evaluation, ensembling."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigurationError, DivergenceError, UsageError
from .tensor import Tensor, backward, no_grad


@dataclass
class TrainConfig:
    lr_max: float = 0.2
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    T_0: int = 10
    T_mult: int = 2
    total_epochs: int = 630
    seed: int = 0
    augment: bool = True
    per_iteration_lr: bool = False

    def __post_init__(self):
        if not 0 <= self.lr_min <= self.lr_max:
            raise ConfigurationError("need 0 <= lr_min <= lr_max")
        if self.T_0 < 1 or self.T_mult < 1:
            raise ConfigurationError("need T_0 >= 1 and T_mult >= 1")
        if self.batch_size < 1 or self.total_epochs < 1:
            raise ConfigurationError("batch_size and total_epochs must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigurationError("momentum must lie in [0, 1) and weight_decay be non-negative")


@dataclass
class MetricsRow:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    wall_seconds: float

    HEADER = "epoch,lr,train_loss,train_acc,test_loss,test_acc,wall_seconds"

    def to_csv(self) -> str:
        return (f"{self.epoch},{self.lr!r},{self.train_loss!r},{self.train_acc!r},"
                f"{self.test_loss!r},{self.test_acc!r},{self.wall_seconds!r}")


def _cycle(cfg: TrainConfig, epoch: float):
    """(start, length) of the restart cycle containing ``epoch``."""
    start, length = 0, cfg.T_0
    while epoch >= start + length:
        start += length
        length *= cfg.T_mult
    return start, length


def sgdr_lr(cfg: TrainConfig, epoch: float) -> float:
    start, length = _cycle(cfg, epoch)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1 + math.cos(math.pi * (epoch - start) / length))


def cycle_boundaries(cfg: TrainConfig) -> list[int]:
    """Epochs at which a cycle ends, up to and including ``total_epochs``."""
    out, start, length = [], 0, cfg.T_0
    while start + length <= cfg.total_epochs:
        start += length
        out.append(start)
        length *= cfg.T_mult
    return out


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)


def decays(name: str) -> bool:
    """Weight decay applies to conv and linear weights, not BN affine or biases."""
    return name.endswith(".weight")


def sgd_momentum_step(params, grads, state: OptimizerState, lr, cfg: TrainConfig):
    """``v <- momentum * v + (g + wd * w)``; ``w <- w - lr * v``.

    ``params`` is a list of ``(name, Tensor)``; ``grads`` maps names to arrays
    (or None to read each tensor's ``grad``).
    """
    for name, w in params:
        g = w.grad if grads is None else grads.get(name)
        if g is None:
            raise UsageError(f"parameter {name} has no gradient; run backward() first")
        if cfg.weight_decay and decays(name):
            g = g + cfg.weight_decay * w.data
        v = state.velocity.get(name)
        v = g.astype(w.dtype, copy=True) if v is None else cfg.momentum * v + g
        state.velocity[name] = v
        w.data -= lr * v


def crop_flip(images: np.ndarray, offsets, flips, pad=4) -> np.ndarray:
    B, C, H, W = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(images)
    for b in range(B):
        dy, dx = offsets[b]
        crop = padded[b, :, dy:dy + H, dx:dx + W]
        out[b] = crop[:, :, ::-1] if flips[b] else crop
    return out


def augment_batch(images: np.ndarray, rng, enabled=True, pad=4) -> np.ndarray:
    """Zero-pad by ``pad``, take a random crop of the original size, flip half."""
    if not enabled:
        return images
    B = images.shape[0]
    offsets = rng.integers(0, 2 * pad + 1, size=(B, 2))
    flips = rng.random(B) < 0.5
    return crop_flip(images, offsets, flips, pad)


def _batches(n, batch_size):
    return [(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def evaluate(net, data, batch_size=256):
    """(mean loss, accuracy) in inference mode; argmax ties go to the lowest index."""
    was_training = net.training
    net.eval()
    total_loss, correct = 0.0, 0
    try:
        with no_grad():
            for a, b in _batches(len(data), batch_size):
                logits = net(data.images[a:b].astype(net.dtype, copy=False))
                labels = data.labels[a:b]
                total_loss += float(ops.softmax_cross_entropy(logits, labels).data) * (b - a)
                correct += int((logits.data.argmax(axis=1) == labels).sum())
    finally:
        net.train(was_training)
    n = max(len(data), 1)
    return total_loss / n, correct / n


def train_epoch(net, data, cfg: TrainConfig, state: OptimizerState, epoch_index: int,
                test_data=None, max_steps=None, clock=time.perf_counter) -> MetricsRow:
    """One pass over ``data`` in seeded shuffled order. Returns its metrics.

    Shuffle and augmentation draw from generators keyed on
    ``(seed, epoch, batch)``, so a run is reproducible batch by batch.
    ``clock=None`` records ``wall_seconds`` as 0.
    """
    t0 = clock() if clock else 0.0
    net.train()
    order = np.random.default_rng([cfg.seed, 1, epoch_index]).permutation(len(data))
    params = list(net.named_parameters())
    batches = _batches(len(data), cfg.batch_size)
    if max_steps is not None:
        batches = batches[:max_steps]
    lr = sgdr_lr(cfg, epoch_index)
    seen, loss_sum, correct = 0, 0.0, 0
    for bi, (a, b) in enumerate(batches):
        idx = order[a:b]
        rng = np.random.default_rng([cfg.seed, 2, epoch_index, bi])
        images = augment_batch(data.images[idx], rng, cfg.augment).astype(net.dtype, copy=False)
        labels = data.labels[idx]
        logits = net(Tensor(images))
        loss = ops.softmax_cross_entropy(logits, labels)
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss {value} at epoch {epoch_index}, batch {bi}")
        net.zero_grad()
        backward(loss)
        if cfg.per_iteration_lr:
            lr = sgdr_lr(cfg, epoch_index + bi / len(batches))
        sgd_momentum_step(params, None, state, lr, cfg)
        loss_sum += value * (b - a)
        correct += int((logits.data.argmax(axis=1) == labels).sum())
        seen += b - a
    if cfg.per_iteration_lr:
        lr = sgdr_lr(cfg, epoch_index)
    test_loss, test_acc = evaluate(net, test_data) if test_data is not None else (math.nan, math.nan)
    return MetricsRow(epoch_index, lr, loss_sum / max(seen, 1), correct / max(seen, 1),
                      test_loss, test_acc, (clock() - t0) if clock else 0.0)


def ensemble_predict(nets, images):
    """Average the softmax probabilities of several networks; returns (labels, mean_probs)."""
    if not nets:
        raise ConfigurationError("ensemble needs at least one network")
    classes = {n.config.num_classes for n in nets}
    if len(classes) != 1:
        raise ConfigurationError(f"ensemble members disagree on class count: {sorted(classes)}")
    total = None
    for i, net in enumerate(nets):
        was_training = net.training
        net.eval()
        try:
            with no_grad():
                probs = ops.softmax(net(np.asarray(images, dtype=net.dtype)).data.astype(np.float64))
        finally:
            net.train(was_training)
        total = probs if total is None else total + (probs - total) / (i + 1)
    return total.argmax(axis=1), total
