"""Next-hop selection for particles crossing the process grid.

Only the first step is ever returned. The receiving process routes the
particle again, so nothing travels with the particle except its position.
"""
from __future__ import annotations

import enum
import heapq
from itertools import count
from typing import Collection, NamedTuple, Sequence

from .topology import CartTopology, coords_to_rank, rank_to_coords

__all__ = [
    "Direction",
    "Hop",
    "astar_next_hop",
    "naive_next_hop",
    "needs_astar",
    "periodic_manhattan",
]


class Direction(NamedTuple):
    dim: int
    sign: int


class Hop(enum.Enum):
    ARRIVED = "arrived"
    UNREACHABLE = "unreachable"


def _way(size: int, periodic: bool, cur: int, dest: int) -> tuple[int, int]:
    """(sign, distance) of the shortest way from ``cur`` to ``dest`` on one axis."""
    if not periodic:
        delta = dest - cur
        return (1 if delta >= 0 else -1), abs(delta)
    fwd = (dest - cur) % size
    back = size - fwd
    if fwd <= back:
        return 1, fwd
    return -1, back


def periodic_manhattan(topo: CartTopology, a: Sequence[int], b: Sequence[int]) -> int:
    return sum(_way(d, p, x, y)[1] for d, p, x, y in zip(topo.dims, topo.periods, a, b))


def naive_next_hop(topo: CartTopology, cur: Sequence[int], dest: Sequence[int]) -> Direction | Hop:
    """Dimension-order routing: fix the lowest differing dimension first."""
    for dim, (x, y) in enumerate(zip(cur, dest)):
        if x != y:
            sign, _ = _way(topo.dims[dim], topo.periods[dim], x, y)
            return Direction(dim, sign)
    return Hop.ARRIVED


def _neighbours(topo: CartTopology, node: tuple[int, ...]):
    for dim in range(topo.ndims):
        size, periodic = topo.dims[dim], topo.periods[dim]
        for sign in (-1, 1):
            c = node[dim] + sign
            if periodic:
                c %= size
            elif not 0 <= c < size:
                continue
            nxt = node[:dim] + (c,) + node[dim + 1:]
            if nxt != node:
                yield Direction(dim, sign), nxt


def astar_next_hop(
    topo: CartTopology, failed: Collection[int], cur: Sequence[int], dest: Sequence[int]
) -> Direction | Hop:
    """First step of a shortest path through live ranks, found with A*.

    Heuristic is the (periodic) Manhattan distance. Equal-priority entries are
    expanded in insertion order, and neighbours are generated by ascending
    dimension with ``-1`` before ``+1``.
    """
    cur, dest = tuple(cur), tuple(dest)
    if coords_to_rank(topo, dest) in failed:
        return Hop.UNREACHABLE
    if cur == dest:
        return Hop.ARRIVED

    tie = count()
    h0 = periodic_manhattan(topo, cur, dest)
    heap = [(h0, h0, next(tie), cur)]
    g_score = {cur: 0}
    first_step: dict[tuple[int, ...], Direction] = {}
    closed = set()
    while heap:
        _, _, _, node = heapq.heappop(heap)
        if node in closed:
            continue
        if node == dest:
            return first_step[node]
        closed.add(node)
        g = g_score[node]
        for step, nxt in _neighbours(topo, node):
            if nxt in closed or coords_to_rank(topo, nxt) in failed:
                continue
            if g + 1 < g_score.get(nxt, float("inf")):
                g_score[nxt] = g + 1
                first_step[nxt] = step if node == cur else first_step[node]
                h = periodic_manhattan(topo, nxt, dest)
                heapq.heappush(heap, (g + 1 + h, h, next(tie), nxt))
    return Hop.UNREACHABLE


def _on_arc(size: int, periodic: bool, cur: int, dest: int, x: int) -> bool:
    sign, dist = _way(size, periodic, cur, dest)
    if periodic:
        return ((x - cur) * sign) % size <= dist
    return min(cur, dest) <= x <= max(cur, dest)


def needs_astar(topo: CartTopology, failed: Collection[int], cur: Sequence[int], dest: Sequence[int]) -> bool:
    """True if a failed rank lies in the box that dimension-order routing sweeps."""
    if not failed:
        return False
    for r in failed:
        fc = rank_to_coords(topo, r)
        if all(
            _on_arc(size, periodic, c, d, x)
            for size, periodic, c, d, x in zip(topo.dims, topo.periods, cur, dest, fc)
        ):
            return True
    return False
