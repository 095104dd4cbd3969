"""Kinematic particles forwarded hop by hop across the process grid.

Particles move with constant velocity. After each move, a particle that
has left its owner's tile is forwarded toward the tile that now contains it,
one neighbour at a time. Dimension-order routing is used unless a known
failure lies in the way, in which case A* picks the hop. Particles whose
destination is gone (or unreachable) are discarded.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass

import numpy as np

from ..routing import Direction, Hop, astar_next_hop, naive_next_hop, needs_astar
from ..topology import CartTopology, rank_to_coords

__all__ = [
    "PARTICLE_DTYPE",
    "Geometry",
    "RoutingLivelockError",
    "advect_particles",
    "decode_particles",
    "encode_particles",
    "exchange_particles",
    "move_particles",
    "route_particles",
    "seed_particles",
]

PARTICLE_DTYPE = np.dtype([("id", "<i8"), ("pos", "<f8", (2,)), ("vel", "<f8", (2,))])
_COUNT = struct.Struct("<Q")


class RoutingLivelockError(RuntimeError):
    pass


def empty_particles() -> np.ndarray:
    return np.empty(0, dtype=PARTICLE_DTYPE)


def encode_particles(parts: np.ndarray) -> bytes:
    """Count as little-endian u64, then one (id, pos, vel) record per particle."""
    parts = np.ascontiguousarray(parts, dtype=PARTICLE_DTYPE)
    return _COUNT.pack(len(parts)) + parts.tobytes()


def decode_particles(payload: bytes) -> np.ndarray:
    (n,) = _COUNT.unpack_from(payload)
    body = payload[_COUNT.size:]
    if len(body) != n * PARTICLE_DTYPE.itemsize:
        raise ValueError(f"payload announces {n} particles but holds {len(body)} bytes")
    return np.frombuffer(body, dtype=PARTICLE_DTYPE).copy()


@dataclass(frozen=True)
class Geometry:
    dims: tuple[int, int]
    cells: tuple[int, int]
    periods: tuple[bool, bool] = (True, True)

    @property
    def extent(self) -> np.ndarray:
        return np.array(self.dims, dtype=float) * np.array(self.cells, dtype=float)

    @property
    def diameter(self) -> int:
        return sum(d // 2 if p else d - 1 for d, p in zip(self.dims, self.periods))

    def tile_index(self, pos: np.ndarray) -> np.ndarray:
        idx = np.floor(pos / np.array(self.cells, dtype=float)).astype(np.int64)
        for d, periodic in enumerate(self.periods):
            if periodic:
                idx[:, d] %= self.dims[d]
        return idx

    def tile_rank(self, pos: np.ndarray) -> np.ndarray:
        idx = self.tile_index(pos)
        return idx[:, 0] * self.dims[1] + idx[:, 1]


def move_particles(parts: np.ndarray, geom: Geometry) -> tuple[np.ndarray, int]:
    """Apply one step of ``pos += vel``. Returns (moved, number lost through open walls)."""
    out = parts.copy()
    out["pos"] += out["vel"]
    extent = geom.extent
    inside = np.ones(len(out), dtype=bool)
    for d, periodic in enumerate(geom.periods):
        if periodic:
            out["pos"][:, d] %= extent[d]
        else:
            inside &= (out["pos"][:, d] >= 0.0) & (out["pos"][:, d] < extent[d])
    return out[inside], int(np.count_nonzero(~inside))


def route_particles(
    topo: CartTopology, failed, me: int, parts: np.ndarray, geom: Geometry
) -> tuple[np.ndarray, dict[Direction, np.ndarray], int]:
    """Split ``parts`` into (kept, outgoing per direction, discarded count)."""
    if len(parts) == 0:
        return parts, {}, 0
    dest = geom.tile_rank(parts["pos"])
    mine = dest == me
    kept = parts[mine]
    outgoing: dict[Direction, list[np.ndarray]] = {}
    discarded = 0
    cur = rank_to_coords(topo, me)
    for d in np.unique(dest[~mine]):
        group = parts[dest == d]
        d = int(d)
        if d in failed:
            discarded += len(group)
            continue
        dc = rank_to_coords(topo, d)
        if needs_astar(topo, failed, cur, dc):
            hop = astar_next_hop(topo, failed, cur, dc)
        else:
            hop = naive_next_hop(topo, cur, dc)
        if hop is Hop.UNREACHABLE:
            discarded += len(group)
            continue
        outgoing.setdefault(hop, []).append(group)
    return kept, {k: np.concatenate(v) for k, v in outgoing.items()}, discarded


def advect_particles(ctx, owned: np.ndarray, geom: Geometry):
    """Move the owned particles and route those that left the tile.

    Returns (kept, outgoing, discarded) where ``discarded`` also counts
    particles that left through a non-periodic wall.
    """
    moved, lost = move_particles(owned, geom)
    kept, outgoing, discarded = route_particles(ctx.topo, ctx.failed, ctx.app_rank, moved, geom)
    return kept, outgoing, discarded + lost


def exchange_particles(ctx, outgoing: dict[Direction, np.ndarray]):
    """One exchange per direction (generator). Returns the particles to route next.

    Particles addressed to a neighbour that turned out to be gone stay with
    the sender and are routed again.
    """
    received = []
    for dim in (0, 1):
        for sign in ctx.exchange_order(dim, bridging=False):
            out = outgoing.get(Direction(dim, sign), empty_particles())
            got = yield from ctx.exchange_or_skip(dim, sign, encode_particles(out))
            if got is None:
                received.append(out)
            else:
                received.append(decode_particles(got))
    if not received:
        return empty_particles()
    return np.concatenate(received)


def forward_all(ctx, kept: np.ndarray, outgoing: dict[Direction, np.ndarray], geom: Geometry):
    """Run forwarding sub-rounds until no particle is in transit anywhere (generator).

    Returns (owned, discarded, sub_rounds). A sub-round is one global check of
    the in-transit count; each check that finds traffic is followed by one
    exchange per direction.
    """
    cap = 4 * max(geom.diameter, 1)
    discarded = 0
    sub_rounds = 0
    parts = [kept]
    while True:
        in_transit = float(sum(len(v) for v in outgoing.values()))
        sub_rounds += 1
        total = yield from ctx.allreduce_sum(in_transit)
        if total == 0.0:
            break
        if sub_rounds > cap:
            raise RoutingLivelockError(
                f"rank {ctx.app_rank}: particles still in transit after {cap} forwarding rounds"
            )
        incoming = yield from exchange_particles(ctx, outgoing)
        k, outgoing, dropped = route_particles(ctx.topo, ctx.failed, ctx.app_rank, incoming, geom)
        parts.append(k)
        discarded += dropped
    return np.concatenate(parts), discarded, sub_rounds


_DENSITY = re.compile(r"uniform-density\(\s*(\d+)\s*\)")


def seed_particles(text: str, geom: Geometry, rank: int, seed: int, vmax: float) -> np.ndarray:
    """Initial particles of one rank for ``uniform-density(n_per_tile)``.

    Positions are uniform inside the tile, velocities uniform in
    ``[-vmax, vmax]`` per component; both come from ``(seed, rank)``.
    """
    m = _DENSITY.fullmatch(text.strip())
    if not m:
        raise ValueError(f"unknown particle seeding {text!r}")
    n = int(m[1])
    rng = np.random.default_rng([seed, rank])
    tx, ty = rank // geom.dims[1], rank % geom.dims[1]
    lo = np.array([tx * geom.cells[0], ty * geom.cells[1]], dtype=float)
    parts = np.empty(n, dtype=PARTICLE_DTYPE)
    parts["id"] = rank * n + np.arange(n)
    parts["pos"] = lo + rng.random((n, 2)) * np.array(geom.cells, dtype=float)
    parts["vel"] = rng.uniform(-vmax, vmax, size=(n, 2))
    return parts
