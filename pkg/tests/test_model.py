import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swgridnet import ops
from swgridnet.errors import ConfigurationError, InvalidInputError
from swgridnet.gradcheck import numerical_grad
from swgridnet.model import (
    GridBlock,
    NetworkConfig,
    block_forward,
    build_network,
    grid_forward,
    join_forward,
    split_forward,
    unit_forward,
)
from swgridnet.tensor import Tensor, backward, no_grad, tensor_sum
from swgridnet.topology import (
    GridSpec,
    channel_in,
    channel_out,
    join_width,
    list_paths,
    rank,
    split_width,
    topological_order,
    unit_coords,
)

TINY = NetworkConfig(dims=2, side=2, base_channels=4, num_classes=2, image_size=8)


def make_block(spec, width=None, seed=0, dtype=np.float64, unit_depth=1):
    block = GridBlock.create(spec, width or spec.c_max, unit_depth, dtype)
    rng = np.random.default_rng(seed)
    for conv in [block.split.conv, block.join.conv] + [c for u in block.units.values() for c in u.convs]:
        fan_in = np.prod(conv.weight.shape[1:])
        conv.weight.data[...] = rng.standard_normal(conv.weight.shape) * np.sqrt(2 / fan_in)
    return block


def rand_input(block, seed=0, hw=4, batch=2):
    r = np.random.default_rng(seed)
    return Tensor(r.standard_normal((batch, block.block_width, hw, hw)), requires_grad=True)


def zero_join(block):
    block.join.conv.weight.data[...] = 0
    block.join.bn.beta.data[...] = 0


def test_split_widths_follow_channel_formula():
    spec = GridSpec(2, 4, 16, 32)
    block = make_block(spec)
    s = split_forward(block.split, rand_input(block))
    assert len(s) == 16
    for p, t in s.items():
        assert t.shape[1] == channel_in(spec, p)
    assert sum(t.shape[1] for t in s.values()) == split_width(spec) == 358


def test_single_unit_grid():
    spec = GridSpec(1, 1, 5, 9)
    block = make_block(spec)
    x = rand_input(block)
    s = split_forward(block.split, x)
    assert list(s) == [(0,)] and s[(0,)].shape[1] == 5
    assert block_forward(block, x).shape == x.shape


def test_origin_unit_uses_its_split_slice_alone():
    block = make_block(GridSpec(2, 3, 4, 8))
    s = split_forward(block.split, rand_input(block))
    origin = block.units[(0, 0)]
    with no_grad():
        a = unit_forward(origin, s[(0, 0)], []).data
        conv = origin.convs[0]
        b = ops.relu(ops.batch_norm(ops.conv2d(s[(0, 0)], conv), origin.bns[0])).data
    np.testing.assert_array_equal(a, b)


def test_unit_rejects_width_mismatch():
    block = make_block(GridSpec(2, 3, 4, 8))
    unit = block.units[(1, 1)]
    good = Tensor(np.zeros((1, unit.channel_in, 4, 4)))
    bad = Tensor(np.zeros((1, unit.channel_in + 1, 4, 4)))
    with pytest.raises(InvalidInputError):
        unit_forward(unit, good, [bad])


@given(st.integers(1, 3), st.integers(1, 3), st.integers(2, 12), st.integers(0, 12), st.integers(1, 2))
@settings(max_examples=25, deadline=None)
def test_channel_bookkeeping(n, l, c_min, extra, depth):
    spec = GridSpec(n, l, c_min, c_min + extra)
    block = make_block(spec, unit_depth=depth)
    assert [w for _, _, w in block.split.slices] == [channel_in(spec, p) for p in topological_order(spec)]
    x = rand_input(block, hw=3, batch=2)
    with no_grad():
        s = split_forward(block.split, x)
        u = grid_forward(block, s)
        for p in unit_coords(spec):
            assert s[p].shape[1] == channel_in(spec, p)
            assert u[p].shape[1] == channel_out(spec, p)
        assert ops.channel_concat([u[p] for p in block.order]).shape[1] == join_width(spec)
        y = join_forward(block.join, u, block.order)
    assert y.shape == x.shape


def test_chain_reading_for_a_line_of_three():
    block = make_block(GridSpec(1, 3, 4, 8))
    calls = []

    def record(unit, s, v):
        calls.append((unit.coord, len(v)))
        return unit_forward(unit, s, v)

    with no_grad():
        grid_forward(block, split_forward(block.split, rand_input(block)), unit_fn=record)
    assert calls == [((0,), 0), ((1,), 1), ((2,), 1)]


@pytest.mark.parametrize("n,l", [(2, 3), (3, 2), (1, 4)])
def test_each_unit_gets_neighbours_plus_its_slice(n, l):
    block = make_block(GridSpec(n, l, 4, 8))
    seen = {}

    def record(unit, s, v):
        seen[unit.coord] = 1 + len(v)
        return unit_forward(unit, s, v)

    with no_grad():
        grid_forward(block, split_forward(block.split, rand_input(block)), unit_fn=record)
    assert seen == {p: 1 + sum(c > 0 for c in p) for p in unit_coords(block.spec)}


def test_permuted_topological_order_is_bit_identical():
    spec = GridSpec(2, 3, 4, 8)
    block = make_block(spec)
    x = rand_input(block)
    with no_grad():
        s = split_forward(block.split, x)
        a = grid_forward(block, s)
        lexi = unit_coords(spec)  # lexicographic order is also a valid schedule
        assert lexi != block.order
        b = grid_forward(block, s, order=lexi)
    for p in a:
        np.testing.assert_array_equal(a[p].data, b[p].data)


@pytest.mark.parametrize("n,l", [(1, 1), (1, 5), (2, 2), (2, 3), (3, 2), (2, 4), (4, 2), (3, 3), (4, 3)])
def test_dataflow_paths_equal_enumerated_paths(n, l):
    spec = GridSpec(n, l)
    if spec.num_units > 81:
        pytest.skip("DFS oracle limited to 81 units")
    block = GridBlock.create(spec, spec.c_max)

    def trace(unit, s, v):
        # a unit extends every path arriving from a neighbour and starts its own
        return {(unit.coord,)} | {path + (unit.coord,) for paths in v for path in paths}

    s_map = {p: None for p in unit_coords(spec)}
    out = grid_forward(block, s_map, unit_fn=trace)
    exercised = set().union(*out.values())
    assert exercised == set(list_paths(spec))


def test_join_output_geometry():
    spec = GridSpec(2, 3, 4, 8)
    block = make_block(spec, width=6)
    x = rand_input(block, hw=5)
    with no_grad():
        y = join_forward(block.join, grid_forward(block, split_forward(block.split, x)), block.order)
    assert y.shape == (2, 6, 5, 5)
    assert np.all(y.data >= 0)


def test_join_rejects_wrong_width():
    block = make_block(GridSpec(1, 2, 4, 8))
    u = {p: Tensor(np.zeros((1, 3, 2, 2))) for p in block.order}
    with pytest.raises(ConfigurationError):
        join_forward(block.join, u, block.order)


@pytest.mark.parametrize("seed", range(5))
def test_zeroed_join_makes_block_identity(seed):
    block = make_block(GridSpec(2, 2, 4, 8), seed=seed)
    zero_join(block)
    x = rand_input(block, seed=seed)
    np.testing.assert_array_equal(block_forward(block, x).data, x.data)


def test_zeroed_join_gradient_is_all_ones():
    block = make_block(GridSpec(2, 2, 4, 8))
    zero_join(block)
    x = rand_input(block)
    backward(tensor_sum(block_forward(block, x)))
    np.testing.assert_allclose(x.grad, 1.0, atol=1e-12)
    fd = numerical_grad(lambda x: tensor_sum(block_forward(block, x)), [x], x)
    np.testing.assert_allclose(fd, 1.0, atol=1e-8)


def test_block_rejects_wrong_width():
    block = make_block(GridSpec(1, 2, 4, 8))
    with pytest.raises(ConfigurationError):
        block_forward(block, Tensor(np.zeros((1, 7, 2, 2))))


def test_network_output_shape_and_spatial_trace(monkeypatch):
    from swgridnet import model

    net = build_network(NetworkConfig(dims=2, side=2, base_channels=4), seed=0)
    sizes = []
    real = model.block_forward

    def spy(block, x):
        sizes.append(x.shape[-1])
        return real(block, x)

    monkeypatch.setattr(model, "block_forward", spy)
    with no_grad():
        logits = net(np.random.default_rng(0).random((8, 3, 32, 32), dtype=np.float32))
    assert logits.shape == (8, 10)
    assert sizes == [32, 16, 8]
    assert np.all(np.isfinite(logits.data))


def test_block_widths_ladder():
    cfg = NetworkConfig(dims=2, side=4, base_channels=16)
    specs = cfg.block_specs()
    assert [(s.c_min, s.c_max) for s in specs] == [(16, 32), (32, 64), (64, 128)]
    assert cfg.block_widths() == [32, 64, 128]


def test_network_rejects_wrong_geometry():
    net = build_network(TINY)
    with pytest.raises(ConfigurationError):
        net(np.zeros((1, 3, 16, 16)))
    with pytest.raises(ConfigurationError):
        net(np.zeros((1, 1, 8, 8)))


def test_tiny_network_double_precision_smoke():
    net = build_network(TINY, dtype=np.float64)
    out = net(np.random.default_rng(3).random((4, 3, 8, 8)))
    assert out.dtype == np.float64 and out.shape == (4, 2)
    assert np.all(np.isfinite(out.data))


def test_msra_statistics():
    # single-unit block with two stacked convs: the second is 3x3, 64 -> 64
    cfg = NetworkConfig(dims=1, side=1, base_channels=32, num_blocks=1, unit_depth=2)
    net = build_network(cfg, seed=7)
    w = net.blocks[0].units[(0,)].convs[1].weight.data
    assert w.shape == (64, 64, 3, 3)
    target = np.sqrt(2 / 576)
    assert abs(w.std() / target - 1) < 0.1
    assert abs(w.mean()) < 0.1 * target


def test_msra_bn_and_bias_values():
    net = build_network(TINY, seed=1)
    for name, p in net.named_parameters():
        if name.endswith(".gamma"):
            assert np.all(p.data == 1)
        elif name.endswith((".beta", ".bias")):
            assert np.all(p.data == 0)


def test_init_is_deterministic():
    a, b = build_network(TINY, seed=5), build_network(TINY, seed=5)
    for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)
    c = build_network(TINY, seed=6)
    assert not np.array_equal(a.stem.weight.data, c.stem.weight.data)


def test_logits_are_deterministic():
    x = np.random.default_rng(0).random((4, 3, 8, 8), dtype=np.float32)
    a = build_network(TINY, seed=2)(x).data
    b = build_network(TINY, seed=2)(x).data
    np.testing.assert_array_equal(a, b)


def test_parameter_names_are_unique_per_unit():
    net = build_network(NetworkConfig(dims=2, side=3, base_channels=4))
    names = [n for n, _ in net.named_parameters()]
    assert len(names) == len(set(names))
    ids = [id(t) for _, t in net.named_parameters()]
    assert len(ids) == len(set(ids))


def test_unit_depth_stacks_convolutions():
    block = make_block(GridSpec(2, 2, 4, 8), unit_depth=3)
    for unit in block.units.values():
        assert len(unit.convs) == 3 == len(unit.bns)
        assert unit.convs[0].in_ch == channel_in(block.spec, unit.coord)
        assert all(c.out_ch == channel_out(block.spec, unit.coord) for c in unit.convs)


def test_rank_order_of_split_slices():
    block = make_block(GridSpec(2, 3, 4, 8))
    ranks = [rank(p) for p, _, _ in block.split.slices]
    assert ranks == sorted(ranks)
    starts = [a for _, a, _ in block.split.slices]
    widths = [w for _, _, w in block.split.slices]
    assert starts == list(np.cumsum([0] + widths[:-1]))
