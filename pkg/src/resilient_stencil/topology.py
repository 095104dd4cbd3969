"""Cartesian process topologies kept apart from the communicator they run on.

A :class:`CartTopology` only remembers its shape, periodicity, and which
communicator it is currently bound to. Repairing the communicator swaps the
binding (:meth:`CartTopology.rebind`) and leaves the rank/coordinate mapping
untouched.

Liveness is passed to :func:`cart_shift` as a collection of failed topology
ranks. Neighbour lookups skip failed ranks along the shifted dimension, so
results depend on when they are computed; query again after every repair.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Collection, Sequence

from .simnet import World

__all__ = [
    "CartTopology",
    "OutOfRangeError",
    "TooFewProcessesError",
    "cart_create",
    "cart_shift",
    "coords_to_rank",
    "rank_to_coords",
]

Coords = tuple[int, ...]


class TooFewProcessesError(ValueError):
    pass


class OutOfRangeError(IndexError):
    pass


@dataclass
class CartTopology:
    dims: tuple[int, ...]
    periods: tuple[bool, ...]
    bound_comm: int
    world_ranks: tuple[int, ...]
    """World rank of each topology rank (creation-time communicator order)."""

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.periods = tuple(bool(p) for p in self.periods)
        if len(self.dims) != len(self.periods):
            raise ValueError("dims and periods must have the same length")
        if not self.dims or any(d < 1 for d in self.dims):
            raise ValueError(f"invalid dims {self.dims}")

    @property
    def ndims(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return prod(self.dims)

    def rebind(self, comm_id: int) -> None:
        self.bound_comm = comm_id

    def rank_to_coords(self, rank: int) -> Coords:
        return rank_to_coords(self, rank)

    def coords_to_rank(self, coords: Sequence[int]) -> int:
        return coords_to_rank(self, coords)

    def topo_rank_of(self, world_rank: int) -> int | None:
        try:
            r = self.world_ranks.index(world_rank)
        except ValueError:
            return None
        return r if r < self.size else None


def cart_create(world: World, comm_id: int, dims: Sequence[int], periods: Sequence[bool]) -> CartTopology:
    members = world.comm(comm_id).members
    need = prod(dims)
    if need > len(members):
        raise TooFewProcessesError(f"topology needs {need} processes, communicator has {len(members)}")
    return CartTopology(tuple(dims), tuple(periods), comm_id, tuple(members[:need]))


def rank_to_coords(topo: CartTopology, rank: int) -> Coords:
    if not 0 <= rank < topo.size:
        raise OutOfRangeError(f"rank {rank} outside topology of {topo.size}")
    coords = []
    for d in reversed(topo.dims):
        rank, c = divmod(rank, d)
        coords.append(c)
    return tuple(reversed(coords))


def coords_to_rank(topo: CartTopology, coords: Sequence[int]) -> int:
    if len(coords) != topo.ndims:
        raise OutOfRangeError(f"expected {topo.ndims} coordinates, got {len(coords)}")
    rank = 0
    for c, d, periodic in zip(coords, topo.dims, topo.periods):
        if periodic:
            c %= d
        elif not 0 <= c < d:
            raise OutOfRangeError(f"coordinate {c} outside non-periodic dimension of size {d}")
        rank = rank * d + c
    return rank


def _unit_walk(topo: CartTopology, failed: Collection[int], coords: list[int], dim: int, step: int) -> bool:
    """Advance ``coords`` in place to the next live rank along ``dim``.

    Returns False if the walk leaves a non-periodic boundary or goes around a
    full period without meeting a live rank.
    """
    size = topo.dims[dim]
    periodic = topo.periods[dim]
    for _ in range(size):
        c = coords[dim] + step
        if periodic:
            c %= size
        elif not 0 <= c < size:
            return False
        coords[dim] = c
        if coords_to_rank(topo, coords) not in failed:
            return True
    return False


def _shift_one(topo, failed, rank, dim, disp):
    coords = list(rank_to_coords(topo, rank))
    step = 1 if disp > 0 else -1
    for _ in range(abs(disp)):
        if not _unit_walk(topo, failed, coords, dim, step):
            return None
    return coords_to_rank(topo, coords)


def cart_shift(
    topo: CartTopology, rank: int, dim: int, disp: int, failed: Collection[int] = frozenset()
) -> tuple[int | None, int | None]:
    """Source and destination ranks for a shift of ``disp`` along ``dim``.

    Failed ranks are bridged: the walk continues in the same direction until
    it finds a live rank. ``None`` means there is no such rank.
    """
    if not 0 <= dim < topo.ndims:
        raise OutOfRangeError(f"dimension {dim} outside 0..{topo.ndims - 1}")
    if disp == 0:
        raise ValueError("displacement must be non-zero")
    return _shift_one(topo, failed, rank, dim, -disp), _shift_one(topo, failed, rank, dim, disp)
