"""Central finite-difference gradient checker."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, no_grad


def numerical_grad(f, inputs, wrt: Tensor, eps=1e-6, indices=None, proj=None) -> np.ndarray:
    """Central differences of ``sum(f(*inputs) * proj)`` w.r.t. ``wrt``, perturbed in place.

    With ``indices`` (flat positions) only those entries are filled; the rest
    of the returned array is zero.
    """
    def value():
        d = f(*inputs).data
        return float(d.sum() if proj is None else (d * proj).sum())

    flat = wrt.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    idx = range(flat.size) if indices is None else indices
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            out[i] = (fp - fm) / (2 * eps)
    return out.reshape(wrt.shape)


def grad_check(f, inputs, eps=1e-6, wrt=None, max_entries=None, seed=0) -> float:
    """Max over checked entries of ``|analytic - numeric| / max(1, |analytic|)``.

    ``f`` maps ``inputs`` to a Tensor and must be deterministic; a non-scalar
    output is contracted with fixed random weights first. ``wrt`` defaults to
    every input with ``requires_grad``. ``max_entries`` caps the entries probed
    per tensor (sampled with ``seed``); None probes all of them. Run in float64.
    """
    inputs = list(inputs)
    targets = [t for t in (inputs if wrt is None else wrt) if t.requires_grad]
    rng = np.random.default_rng(seed)
    for t in targets:
        t.zero_grad()
    out = f(*inputs)
    proj = None if out.size == 1 else rng.standard_normal(out.shape)
    seed_grad = np.ones_like(out.data) if proj is None else proj.astype(out.dtype)
    if out.node is None:
        # f recorded nothing, e.g. the identity on a leaf
        analytic = {id(t): (seed_grad if t is out else np.zeros_like(t.data)) for t in targets}
    else:
        backward(out, seed_grad)
        analytic = {id(t): (np.zeros_like(t.data) if t.grad is None else t.grad) for t in targets}

    worst = 0.0
    for t in targets:
        n = t.size
        idx = None
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        num = numerical_grad(f, inputs, t, eps=eps, indices=idx, proj=proj).reshape(-1)
        ana = np.asarray(analytic[id(t)], dtype=np.float64).reshape(-1)
        if idx is not None:
            num, ana = num[idx], ana[idx]
        if ana.size:
            err = np.abs(ana - num) / np.maximum(1.0, np.abs(ana))
            worst = max(worst, float(err.max()))
    return worst


def check_network_gradients(config, seed=0, batch=2, eps=1e-6, max_entries=48, data_seed=None):
    """Finite-difference check of every parameter tensor of a float64 network.

    Returns ``(max_rel_err, per_tensor)`` where ``per_tensor`` maps parameter
    names to their own max relative error. BN running statistics are
    restored afterwards.
    """
    from . import ops
    from .model import build_network

    net = build_network(config, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed if data_seed is None else data_seed)
    S = config.image_size
    images = Tensor(rng.random((batch, 3, S, S)))
    labels = np.arange(batch) % config.num_classes
    saved = [(bn.running_mean.copy(), bn.running_var.copy()) for _, bn in net.batchnorms()]

    def loss_fn(*_):
        return ops.softmax_cross_entropy(net(images), labels)

    per_tensor = {}
    for i, (name, p) in enumerate(net.named_parameters()):
        per_tensor[name] = grad_check(loss_fn, [], eps=eps, wrt=[p], max_entries=max_entries, seed=seed + i)
    for (_, bn), (m, v) in zip(net.batchnorms(), saved):
        bn.running_mean[...] = m
        bn.running_var[...] = v
    return max(per_tensor.values()), per_tensor
