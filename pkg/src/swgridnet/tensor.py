"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable op that touches a
tensor with ``requires_grad`` records a :class:`TapeNode` on its output; the
nodes form an acyclic graph that :func:`backward` replays in reverse
topological order. Only leaf tensors (parameters, inputs) keep a ``grad``
buffer; intermediate gradients live in a scratch dict for one replay.
"""

from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, UsageError

DEFAULT_DTYPE = np.float32

_grad_enabled = True
DEBUG = os.environ.get("SWGRIDNET_DEBUG", "") not in ("", "0")


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


@dataclass(eq=False)
class TapeNode:
    """One recorded op: its inputs and a rule mapping output grad to input grads.

    ``backward_fn`` returns one gradient (or None) per entry of ``inputs``.
    Saved intermediates live in the closure.
    """

    op: str
    inputs: tuple
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    saved: dict = field(default_factory=dict)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        if arr.ndim > 4:
            raise InvalidInputError(f"tensors are limited to rank 4, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self.node is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def backward(self, grad=None):
        backward(self, grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def sum(self):
        return tensor_sum(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_output(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn, **saved) -> Tensor:
    """Wrap an op result and record it on the tape if any input needs gradients."""
    if DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError(f"{op} produced non-finite output from finite inputs")
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(op, tuple(inputs), backward_fn, saved)
    return out


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf's ``grad`` slot.

    Calling twice without zeroing adds the gradients twice.
    """
    if loss.node is None:
        raise UsageError("backward() needs a tensor produced by a recorded forward pass")
    if grad is None:
        if loss.size != 1:
            raise UsageError("backward() without an explicit grad needs a scalar loss")
        grad = np.ones_like(loss.data)
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for t in reversed(_topological(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_output(out, "add", (a, b), bw)


def mul(a, b) -> Tensor:
    """Elementwise product; a python scalar ``b`` is treated as a constant."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = b
        return make_output(a.data * c, "scale", (a,), lambda g: (g * c,))
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_output(out, "mul", (a, b), bw)


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return make_output(np.asarray(a.data.sum()), "sum", (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_output(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))
