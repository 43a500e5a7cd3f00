"""Layer primitives used by the grid network, each with its backward rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, InvalidInputError
from .tensor import Tensor, as_tensor, make_output


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ConfigurationError(f"conv weight must be (out, in, kh, kw), got {self.weight.shape}")
        out_ch, in_ch, _, _ = self.weight.shape
        if out_ch < 1 or in_ch < 1:
            raise ConfigurationError("conv needs at least one input and one output channel")
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError(f"bad stride/padding {self.stride}/{self.padding}")
        if self.bias is not None and self.bias.shape != (out_ch,):
            raise ConfigurationError(f"bias shape {self.bias.shape} does not match {out_ch} filters")

    @property
    def in_ch(self):
        return self.weight.shape[1]

    @property
    def out_ch(self):
        return self.weight.shape[0]

    @property
    def kernel(self):
        return self.weight.shape[2:]


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9
    training_mode: bool = True

    @classmethod
    def create(cls, channels, dtype=np.float32, **kw):
        return cls(
            gamma=Tensor(np.ones(channels, dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            **kw,
        )

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError("batch norm eps must be positive")
        if not 0 < self.momentum < 1:
            raise ConfigurationError("batch norm momentum must lie in (0, 1)")

    @property
    def channels(self):
        return self.gamma.shape[0]


def _out_extent(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """Cross-correlation via patch gather + one matrix multiply."""
    w = params.weight
    if x.ndim != 4:
        raise ConfigurationError(f"conv2d expects (B, C, H, W), got {x.shape}")
    B, C, H, W = x.shape
    O, Ci, kh, kw = w.shape
    if C != Ci:
        raise ConfigurationError(f"conv2d channel mismatch: input has {C}, weight expects {Ci}")
    s, p = params.stride, params.padding
    Ho, Wo = _out_extent(H, kh, s, p), _out_extent(W, kw, s, p)
    if Ho < 1 or Wo < 1:
        raise ConfigurationError(f"conv2d output extent {Ho}x{Wo} is not positive")
    bias = params.bias
    inputs = (x, w) if bias is None else (x, w, bias)

    if kh == 1 and kw == 1 and s == 1 and p == 0:
        # 1x1 conv is a channel matmul; skip the gather
        x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, C)
        w2 = w.data.reshape(O, C)
        out = (x2 @ w2.T).reshape(B, H, W, O)
        if bias is not None:
            out = out + bias.data
        out = out.transpose(0, 3, 1, 2)

        def bw(g):
            g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
            dx = (g2 @ w2).reshape(B, H, W, C).transpose(0, 3, 1, 2)
            dw = (g2.T @ x2).reshape(w.shape)
            return (dx, dw) if bias is None else (dx, dw, g2.sum(axis=0))

        return make_output(np.ascontiguousarray(out), "conv2d", inputs, bw)

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    w2 = w.data.reshape(O, -1)
    out = cols @ w2.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        dw = (g2.T @ cols).reshape(w.shape)
        dcols = (g2 @ w2).reshape(B, Ho, Wo, C, kh, kw)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:p + H, p:p + W] if p else dxp
        return (dx, dw) if bias is None else (dx, dw, g2.sum(axis=0))

    return make_output(np.ascontiguousarray(out), "conv2d", inputs, bw)


def conv2d_direct(x: np.ndarray, weight: np.ndarray, bias=None, stride=1, padding=0) -> np.ndarray:
    """Loop-based reference convolution. Slow; kept as a test oracle."""
    B, C, H, W = x.shape
    O, _, kh, kw = weight.shape
    Ho, Wo = _out_extent(H, kh, stride, padding), _out_extent(W, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((B, O, Ho, Wo), dtype=np.result_type(x, weight))
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[b, c, i * stride + di, j * stride + dj] * weight[o, c, di, dj]
                    out[b, o, i, j] = acc + (0.0 if bias is None else bias[o])
    return out


def batch_norm(x: Tensor, state: BatchNormState) -> Tensor:
    """Per-channel standardization followed by the gamma/beta affine map.

    Training mode normalizes with batch statistics and folds them into the
    running estimates (``running = momentum * running + (1 - momentum) * batch``,
    unbiased variance). Inference mode uses the running estimates only.
    """
    if x.ndim not in (2, 4):
        raise InvalidInputError(f"batch_norm expects rank 2 or 4 input, got {x.shape}")
    C = x.shape[1]
    if C != state.channels:
        raise ConfigurationError(f"batch_norm has {state.channels} channels, input has {C}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, C) if x.ndim == 2 else (1, C, 1, 1)
    m = x.size // C
    if m == 0:
        raise InvalidInputError("batch_norm got zero elements per channel")
    gamma, beta = state.gamma, state.beta
    g_b = gamma.data.reshape(bshape)

    if not state.training_mode:
        inv = 1.0 / np.sqrt(state.running_var.reshape(bshape) + state.eps)
        xhat = (x.data - state.running_mean.reshape(bshape)) * inv
        out = g_b * xhat + beta.data.reshape(bshape)

        def bw_eval(g):
            return g * g_b * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return make_output(out.astype(x.dtype, copy=False), "batch_norm", (x, gamma, beta), bw_eval)

    mean = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = xc * inv
    out = g_b * xhat + beta.data.reshape(bshape)

    mom = state.momentum
    unbiased = var.reshape(C) * (m / max(m - 1, 1))
    state.running_mean[...] = mom * state.running_mean + (1 - mom) * mean.reshape(C)
    state.running_var[...] = mom * state.running_var + (1 - mom) * unbiased

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_b
        dx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        return dx, dgamma, dbeta

    return make_output(out.astype(x.dtype, copy=False), "batch_norm", (x, gamma, beta), bw)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_output(np.where(mask, x.data, 0).astype(x.dtype, copy=False), "relu", (x,), lambda g: (g * mask,))


def avg_pool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    stride = window if stride is None else stride
    B, C, H, W = x.shape
    if window > H or window > W:
        raise ConfigurationError(f"pool window {window} exceeds spatial extent {H}x{W}")
    if window < 1 or stride < 1:
        raise ConfigurationError("pool window and stride must be positive")
    Ho, Wo = (H - window) // stride + 1, (W - window) // stride + 1
    if window == stride and H % window == 0 and W % window == 0:
        out = x.data.reshape(B, C, Ho, window, Wo, window).mean(axis=(3, 5))
    else:
        win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
        out = win[:, :, :Ho, :Wo].mean(axis=(4, 5))
    scale = 1.0 / (window * window)

    def bw(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        gs = g * scale
        for i in range(window):
            for j in range(window):
                dx[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gs
        return (dx,)

    return make_output(out.astype(x.dtype, copy=False), "avg_pool2d", (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    B, C, H, W = x.shape
    out = x.data.mean(axis=(2, 3))
    scale = 1.0 / (H * W)
    return make_output(out, "global_avg_pool", (x,),
                       lambda g: (np.broadcast_to((g * scale)[:, :, None, None], x.shape).copy(),))


def mean_combine(inputs) -> Tensor:
    """Elementwise mean of same-shape tensors.

    Accumulated as a running mean so that k copies of x give back x exactly.
    """
    inputs = [as_tensor(t) for t in inputs]
    if not inputs:
        raise InvalidInputError("mean_combine needs at least one input")
    shape = inputs[0].shape
    for t in inputs[1:]:
        if t.shape != shape:
            raise InvalidInputError(f"mean_combine shape mismatch: {shape} vs {t.shape}")
    if len(inputs) == 1:
        return inputs[0]
    acc = inputs[0].data.copy()
    for i, t in enumerate(inputs[1:], start=2):
        acc += (t.data - acc) / i
    n = len(inputs)
    return make_output(acc, "mean_combine", inputs, lambda g: [g / n] * n)


def channel_concat(inputs) -> Tensor:
    inputs = [as_tensor(t) for t in inputs]
    if not inputs:
        raise InvalidInputError("channel_concat needs at least one input")
    ref = inputs[0].shape
    for t in inputs:
        if t.ndim != len(ref) or t.shape[:1] + t.shape[2:] != ref[:1] + ref[2:]:
            raise ConfigurationError(f"channel_concat extent mismatch: {ref} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])
    out = np.concatenate([t.data for t in inputs], axis=1)

    def bw(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(inputs))]

    return make_output(out, "channel_concat", inputs, bw)


def channel_slice(x: Tensor, ranges) -> list[Tensor]:
    """Split ``x`` along channels into the given ``(start, length)`` pieces."""
    C = x.shape[1]
    taken = sorted((int(a), int(n)) for a, n in ranges)
    end = 0
    for a, n in taken:
        if n < 1 or a < 0 or a + n > C:
            raise ConfigurationError(f"slice ({a}, {n}) outside {C} channels")
        if a < end:
            raise ConfigurationError(f"slice ({a}, {n}) overlaps a previous slice")
        end = a + n
    outs = []
    for a, n in ranges:
        def bw(g, a=a, n=n):
            dx = np.zeros(x.shape, dtype=g.dtype)
            dx[:, a:a + n] = g
            return (dx,)

        outs.append(make_output(x.data[:, a:a + n], "channel_slice", (x,), bw))
    return outs


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2:
        raise ConfigurationError(f"linear expects (B, C) input, got {x.shape}")
    K, C = weight.shape
    if x.shape[1] != C:
        raise ConfigurationError(f"linear dimension mismatch: input {x.shape[1]}, weight {C}")
    if bias is not None and bias.shape != (K,):
        raise ConfigurationError(f"linear bias shape {bias.shape}, expected ({K},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        grads = (g @ weight.data, g.T @ x.data)
        return grads if bias is None else grads + (g.sum(axis=0),)

    return make_output(out, "linear", inputs, bw)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    B, K = logits.shape
    if labels.shape != (B,):
        raise InvalidInputError(f"expected {B} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise InvalidInputError(f"labels must lie in [0, {K})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = (logsum - z[rows, labels]).mean()

    def bw(g):
        d = softmax(logits.data)
        d[rows, labels] -= 1.0
        return (d * (g / B),)

    return make_output(np.asarray(loss, dtype=logits.dtype), "softmax_cross_entropy", (logits,), bw)
