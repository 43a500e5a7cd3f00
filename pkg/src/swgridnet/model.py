"""Grid blocks and the full classifier built from them.

A grid block computes ``y = join(grid(split(x))) + x``:

* split: 1x1 conv + BN over the block input, then sliced into one piece per
  unit (widths from :func:`topology.channel_in`);
* grid: each unit averages its split slice with its in-neighbors' outputs and
  applies conv3x3 -> BN -> ReLU (``unit_depth`` times);
* join: concatenation of every unit output, 1x1 conv, BN, ReLU.

The classifier is stem conv -> block, (avg-pool, 1x1 widen + BN, block)... ->
global average pool -> linear.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np

from . import ops
from .errors import ConfigurationError, InvalidInputError
from .ops import BatchNormState, ConvParams
from .tensor import Tensor, add
from .topology import GridSpec, channel_in, channel_out, join_width, neighbors_in, split_width, topological_order


@dataclass
class NetworkConfig:
    dims: int = 2
    side: int = 4
    base_channels: int = 16  # k: c_min of the first block
    num_blocks: int = 3
    num_classes: int = 10
    image_size: int = 32
    unit_depth: int = 1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigurationError(f"{f.name} must be a positive integer")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be at least 2")
        if self.image_size % 2 ** (self.num_blocks - 1):
            raise ConfigurationError(
                f"image_size {self.image_size} cannot be halved {self.num_blocks - 1} times")

    def block_specs(self) -> list[GridSpec]:
        k = self.base_channels
        return [GridSpec(self.dims, self.side, k * 2**i, 2 * k * 2**i) for i in range(self.num_blocks)]

    def block_widths(self) -> list[int]:
        return [s.c_max for s in self.block_specs()]

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()


def _conv(in_ch, out_ch, k, dtype, bias=False):
    w = Tensor(np.zeros((out_ch, in_ch, k, k), dtype), requires_grad=True)
    b = Tensor(np.zeros(out_ch, dtype), requires_grad=True) if bias else None
    return ConvParams(w, b, stride=1, padding=k // 2)


@dataclass
class SplitLayer:
    conv: ConvParams
    bn: BatchNormState
    slices: list  # (coord, start, length) in topological order


@dataclass
class GridUnit:
    coord: tuple
    convs: list
    bns: list

    @property
    def channel_in(self):
        return self.convs[0].in_ch

    @property
    def channel_out(self):
        return self.convs[-1].out_ch


@dataclass
class JoinLayer:
    conv: ConvParams
    bn: BatchNormState


@dataclass
class GridBlock:
    spec: GridSpec
    split: SplitLayer
    units: dict
    join: JoinLayer
    block_width: int
    order: list = field(default_factory=list)

    @classmethod
    def create(cls, spec: GridSpec, block_width: int, unit_depth=1, dtype=np.float32):
        order = topological_order(spec)
        slices, start = [], 0
        for p in order:
            n = channel_in(spec, p)
            slices.append((p, start, n))
            start += n
        split = SplitLayer(_conv(block_width, split_width(spec), 1, dtype),
                           BatchNormState.create(split_width(spec), dtype), slices)
        units = {}
        for p in order:
            cin, cout = channel_in(spec, p), channel_out(spec, p)
            widths = [cin] + [cout] * unit_depth
            units[p] = GridUnit(p, [_conv(a, b, 3, dtype) for a, b in zip(widths, widths[1:])],
                                [BatchNormState.create(cout, dtype) for _ in range(unit_depth)])
        join = JoinLayer(_conv(join_width(spec), block_width, 1, dtype), BatchNormState.create(block_width, dtype))
        return cls(spec, split, units, join, block_width, order)


@dataclass
class Transition:
    conv: ConvParams
    bn: BatchNormState


@dataclass
class SwGridNetwork:
    config: NetworkConfig
    stem: ConvParams
    blocks: list
    transitions: list
    head_weight: Tensor
    head_bias: Tensor

    @classmethod
    def create(cls, config: NetworkConfig, dtype=np.float32):
        widths = config.block_widths()
        stem = _conv(3, widths[0], 3, dtype, bias=True)
        blocks = [GridBlock.create(s, w, config.unit_depth, dtype) for s, w in zip(config.block_specs(), widths)]
        transitions = [Transition(_conv(a, b, 1, dtype), BatchNormState.create(b, dtype))
                       for a, b in zip(widths, widths[1:])]
        head_w = Tensor(np.zeros((config.num_classes, widths[-1]), dtype), requires_grad=True)
        head_b = Tensor(np.zeros(config.num_classes, dtype), requires_grad=True)
        return cls(config, stem, blocks, transitions, head_w, head_b)

    def __call__(self, images):
        return network_forward(self, images)

    def batchnorms(self):
        for name, obj in _walk(self):
            if isinstance(obj, BatchNormState):
                yield name, obj

    def named_parameters(self):
        for name, obj in _walk(self):
            if isinstance(obj, ConvParams):
                yield f"{name}.weight", obj.weight
                if obj.bias is not None:
                    yield f"{name}.bias", obj.bias
            elif isinstance(obj, BatchNormState):
                yield f"{name}.gamma", obj.gamma
                yield f"{name}.beta", obj.beta
        yield "head.weight", self.head_weight
        yield "head.bias", self.head_bias

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def named_buffers(self):
        for name, bn in self.batchnorms():
            yield f"{name}.running_mean", bn.running_mean
            yield f"{name}.running_var", bn.running_var

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self):
        for t in self.parameters():
            t.zero_grad()

    def train(self, mode=True):
        for _, bn in self.batchnorms():
            bn.training_mode = mode
        return self

    def eval(self):
        return self.train(False)

    @property
    def training(self) -> bool:
        return any(bn.training_mode for _, bn in self.batchnorms())

    @property
    def dtype(self):
        return self.head_weight.dtype

    def astype(self, dtype):
        """Cast every parameter and statistic in place."""
        for t in self.parameters():
            t.data = t.data.astype(dtype)
            t.grad = None
        for _, bn in self.batchnorms():
            bn.running_mean = bn.running_mean.astype(dtype)
            bn.running_var = bn.running_var.astype(dtype)
        return self


def _unit_name(p):
    return "_".join(map(str, p))


def _walk(net: SwGridNetwork):
    """(dotted name, ConvParams | BatchNormState) in a fixed order."""
    yield "stem", net.stem
    for i, block in enumerate(net.blocks):
        pre = f"blocks.{i}"
        yield f"{pre}.split.conv", block.split.conv
        yield f"{pre}.split.bn", block.split.bn
        for p in block.order:
            unit = block.units[p]
            for j, (conv, bn) in enumerate(zip(unit.convs, unit.bns)):
                yield f"{pre}.units.{_unit_name(p)}.conv{j}", conv
                yield f"{pre}.units.{_unit_name(p)}.bn{j}", bn
        yield f"{pre}.join.conv", block.join.conv
        yield f"{pre}.join.bn", block.join.bn
        if i < len(net.transitions):
            yield f"transitions.{i}.conv", net.transitions[i].conv
            yield f"transitions.{i}.bn", net.transitions[i].bn


def init_msra(net: SwGridNetwork, seed=0):
    """He-normal weights (std sqrt(2 / fan_in)), zero biases, BN at identity."""
    rng = np.random.default_rng(seed)
    for name, t in net.named_parameters():
        if name.endswith(".weight"):
            fan_in = int(np.prod(t.shape[1:]))
            t.data[...] = rng.standard_normal(t.shape) * np.sqrt(2.0 / fan_in)
        elif name.endswith(".gamma"):
            t.data[...] = 1
        else:
            t.data[...] = 0
        t.grad = None
    for _, bn in net.batchnorms():
        bn.running_mean[...] = 0
        bn.running_var[...] = 1


def build_network(config: NetworkConfig, seed=0, dtype=np.float32) -> SwGridNetwork:
    net = SwGridNetwork.create(config, dtype)
    init_msra(net, seed)
    return net


def conv_bn(x, conv, bn, activate=True):
    y = ops.batch_norm(ops.conv2d(x, conv), bn)
    return ops.relu(y) if activate else y


def split_forward(layer: SplitLayer, x: Tensor) -> dict:
    if x.shape[1] != layer.conv.in_ch:
        raise ConfigurationError(f"split layer expects {layer.conv.in_ch} channels, got {x.shape[1]}")
    y = conv_bn(x, layer.conv, layer.bn, activate=False)
    pieces = ops.channel_slice(y, [(a, n) for _, a, n in layer.slices])
    return {p: s for (p, _, _), s in zip(layer.slices, pieces)}


def unit_forward(unit: GridUnit, s: Tensor, v) -> Tensor:
    widths = {t.shape[1] for t in [s, *v]}
    if widths != {unit.channel_in}:
        raise InvalidInputError(
            f"unit {unit.coord} expects {unit.channel_in} input channels, got widths {sorted(widths)}")
    h = ops.mean_combine([s, *v])
    for conv, bn in zip(unit.convs, unit.bns):
        h = conv_bn(h, conv, bn)
    return h


def grid_forward(block: GridBlock, s_map: dict, order=None, unit_fn=unit_forward) -> dict:
    """Evaluate every unit after its in-neighbors; returns coord -> output.

    ``order`` may be any valid topological order (default: the block's).
    ``unit_fn(unit, s, v)`` is swappable so tests can trace the dataflow.
    """
    missing = set(block.units) - set(s_map)
    if missing:
        raise ConfigurationError(f"split output is missing units {sorted(missing)}")
    u = {}
    for p in block.order if order is None else order:
        v = [u[q] for q in neighbors_in(block.spec, p)]
        u[p] = unit_fn(block.units[p], s_map[p], v)
    return u


def join_forward(layer: JoinLayer, u_map: dict, order) -> Tensor:
    x = ops.channel_concat([u_map[p] for p in order])
    if x.shape[1] != layer.conv.in_ch:
        raise ConfigurationError(f"join layer expects {layer.conv.in_ch} channels, got {x.shape[1]}")
    return conv_bn(x, layer.conv, layer.bn)


def block_forward(block: GridBlock, x: Tensor) -> Tensor:
    if x.ndim != 4 or x.shape[1] != block.block_width:
        raise ConfigurationError(f"grid block expects {block.block_width} channels, got shape {x.shape}")
    f = join_forward(block.join, grid_forward(block, split_forward(block.split, x)), block.order)
    return add(f, x)


def network_forward(net: SwGridNetwork, images) -> Tensor:
    images = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=net.dtype))
    S = net.config.image_size
    if images.ndim != 4 or images.shape[1:] != (3, S, S):
        raise ConfigurationError(f"network expects (B, 3, {S}, {S}) images, got {images.shape}")
    h = ops.conv2d(images, net.stem)
    for i, block in enumerate(net.blocks):
        h = block_forward(block, h)
        if i < len(net.transitions):
            t = net.transitions[i]
            h = conv_bn(ops.avg_pool2d(h, 2, 2), t.conv, t.bn, activate=False)
    h = ops.global_avg_pool(h)
    return ops.linear(h, net.head_weight, net.head_bias)
