"""Combinatorics of one grid layer.

Units sit on the hypercubic lattice ``{0..L-1}^N``. Unit ``p`` reads from
every ``p - e_m`` (its in-neighbors) and feeds every ``p + e_m``. A
processing path is a chain of units along ``+e_m`` steps, entered from the
split layer and left to the join layer; its depth is the number of units on
it, so a one-dimensional grid of four units has 4/3/2/1 paths of depth
1/2/3/4.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .errors import ConfigurationError, InvalidInputError, ResourceError

ENUMERATION_LIMIT = 10**6


@dataclass(frozen=True)
class GridSpec:
    dims: int
    side: int
    c_min: int = 16
    c_max: int = 32

    def __post_init__(self):
        if self.dims < 1 or self.side < 1:
            raise ConfigurationError(f"grid needs dims >= 1 and side >= 1, got N={self.dims} L={self.side}")
        if self.c_min < 1 or self.c_max < self.c_min:
            raise ConfigurationError(f"channel range [{self.c_min}, {self.c_max}] is invalid")

    @property
    def num_units(self) -> int:
        return self.side**self.dims

    @property
    def max_rank(self) -> int:
        """Largest coordinate sum, N(L-1)."""
        return self.dims * (self.side - 1)


@dataclass
class PathHistogram:
    counts: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def max_depth(self) -> int:
        return max((d for d, c in self.counts.items() if c), default=0)

    def rows(self):
        return sorted(self.counts.items())


def rank(p) -> int:
    return sum(p)


def _check(spec: GridSpec, p):
    if len(p) != spec.dims or any(not 0 <= c < spec.side for c in p):
        raise InvalidInputError(f"{tuple(p)} is not a unit of a {spec.dims}-D grid with side {spec.side}")


def unit_coords(spec: GridSpec) -> list[tuple[int, ...]]:
    """All L^N coordinates in lexicographic order."""
    return list(itertools.product(range(spec.side), repeat=spec.dims))


def neighbors_in(spec: GridSpec, p) -> list[tuple[int, ...]]:
    _check(spec, p)
    p = tuple(p)
    return [p[:m] + (p[m] - 1,) + p[m + 1:] for m in range(spec.dims) if p[m] > 0]


def neighbors_out(spec: GridSpec, p) -> list[tuple[int, ...]]:
    _check(spec, p)
    p = tuple(p)
    return [p[:m] + (p[m] + 1,) + p[m + 1:] for m in range(spec.dims) if p[m] < spec.side - 1]


def channel_in(spec: GridSpec, p) -> int:
    """floor(c_min + (c_max - c_min) * rank / (1 + N(L-1))), in exact integer arithmetic."""
    return spec.c_min + (spec.c_max - spec.c_min) * rank(p) // (1 + spec.max_rank)


def channel_out(spec: GridSpec, p) -> int:
    return spec.c_min + (spec.c_max - spec.c_min) * (1 + rank(p)) // (1 + spec.max_rank)


def split_width(spec: GridSpec) -> int:
    return sum(channel_in(spec, p) for p in unit_coords(spec))


def join_width(spec: GridSpec) -> int:
    return sum(channel_out(spec, p) for p in unit_coords(spec))


def topological_order(spec: GridSpec) -> list[tuple[int, ...]]:
    """Units sorted by rank, ties broken lexicographically."""
    return sorted(unit_coords(spec), key=lambda p: (rank(p), p))


def enumerate_paths(spec: GridSpec) -> PathHistogram:
    """Count processing paths per depth.

    Dynamic program over units in reverse topological order: ``ways[p][d]``
    is the number of depth-``d`` paths that start at ``p``.
    """
    if spec.num_units > ENUMERATION_LIMIT:
        raise ResourceError(f"{spec.num_units} units exceeds the enumeration limit of {ENUMERATION_LIMIT}")
    depth_cap = spec.max_rank + 1
    ways = {}
    for p in reversed(topological_order(spec)):
        row = [0] * (depth_cap + 1)
        row[1] = 1
        for q in neighbors_out(spec, p):
            nxt = ways[q]
            for d in range(1, depth_cap):
                row[d + 1] += nxt[d]
        ways[p] = row
    counts = {d: sum(r[d] for r in ways.values()) for d in range(1, depth_cap + 1)}
    return PathHistogram(counts)


def list_paths(spec: GridSpec):
    """Every processing path as a tuple of units, by depth-first search.

    Exponential in general; intended as an oracle for small grids.
    """
    if spec.num_units > ENUMERATION_LIMIT:
        raise ResourceError(f"{spec.num_units} units exceeds the enumeration limit of {ENUMERATION_LIMIT}")
    paths = []

    def walk(prefix):
        paths.append(tuple(prefix))
        for q in neighbors_out(spec, prefix[-1]):
            prefix.append(q)
            walk(prefix)
            prefix.pop()

    for p in unit_coords(spec):
        walk([p])
    return paths
