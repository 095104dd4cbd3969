"""Fault-resilience layer between a stencil program and the simulated network.

Each simulated process owns one :class:`ResilienceContext`. The context talks
to the network on an internal communicator that the application never sees.
When an operation fails, the context revokes that communicator, shrinks it to
the survivors, rebinds the cartesian topology to the result and retries. The
application keeps its rank and coordinates throughout.

Exchanges whose partner has failed are completed according to the run's
:class:`Strategy`:

``default``      the receive buffer is filled with a constant
``mirror``       the process gets back what it sent
``bridge``       the exchange goes to the next live rank past the failure
``interpolate``  a weighted mean of what was sent and what the bridged rank sent

All communicating methods are generators meant to be driven with
``yield from`` inside a program run by :meth:`World.run`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .simnet import AllreduceSum, CommError, Revoke, SendRecvReplace, Shrink, World
from .topology import CartTopology, cart_shift, rank_to_coords

__all__ = [
    "NoSurvivorsError",
    "PlainContext",
    "ResilienceContext",
    "Strategy",
    "StrategyName",
]


class NoSurvivorsError(RuntimeError):
    pass


class StrategyName(str, enum.Enum):
    DEFAULT = "default"
    MIRROR = "mirror"
    BRIDGE = "bridge"
    INTERPOLATE = "interpolate"


@dataclass(frozen=True)
class Strategy:
    name: StrategyName = StrategyName.MIRROR
    fill_value: float = 0.0
    weight: float = 0.5
    """Share of the bridged rank's data in an interpolated result."""

    def __post_init__(self):
        object.__setattr__(self, "name", StrategyName(self.name))
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"interpolation weight {self.weight} outside [0, 1]")

    @classmethod
    def default(cls, fill_value: float = 0.0) -> "Strategy":
        return cls(StrategyName.DEFAULT, fill_value=fill_value)

    @classmethod
    def mirror(cls) -> "Strategy":
        return cls(StrategyName.MIRROR)

    @classmethod
    def bridge(cls) -> "Strategy":
        return cls(StrategyName.BRIDGE)

    @classmethod
    def interpolate(cls, weight: float = 0.5) -> "Strategy":
        return cls(StrategyName.INTERPOLATE, weight=weight)

    @property
    def bridges(self) -> bool:
        return self.name in (StrategyName.BRIDGE, StrategyName.INTERPOLATE)


class _ContextBase:
    bridging = False
    world: World
    topo: CartTopology
    app_rank: int
    failed: frozenset[int]

    @property
    def world_rank(self) -> int:
        return self.topo.world_ranks[self.app_rank]

    @property
    def coords(self) -> tuple[int, ...]:
        return rank_to_coords(self.topo, self.app_rank)

    def direct_peer(self, dim: int, direction: int) -> int | None:
        """Plain cartesian neighbour, ignoring liveness."""
        return cart_shift(self.topo, self.app_rank, dim, direction)[1]

    def active_peer(self, dim: int, direction: int, bridging: bool = False) -> int | None:
        """Rank this process will actually exchange with, given its current view."""
        direct = self.direct_peer(dim, direction)
        if direct is None or direct not in self.failed:
            return direct
        if not bridging:
            return None
        return cart_shift(self.topo, self.app_rank, dim, direction, self.failed)[1]

    def exchange_order(self, dim: int, bridging: bool | None = None) -> tuple[int, int]:
        """Order of the two exchanges along ``dim`` that cannot deadlock.

        Exchanges along a line are ordered by the coordinate of their lower
        end; a process does the ``+`` side first only when its ``-`` partner
        wraps around the period.
        """
        if bridging is None:
            bridging = self.bridging
        minus = self.active_peer(dim, -1, bridging)
        if minus is not None and rank_to_coords(self.topo, minus)[dim] > self.coords[dim]:
            return (1, -1)
        return (-1, 1)

    def failed_ranks(self) -> tuple[int, ...]:
        return tuple(sorted(self.failed))


class PlainContext(_ContextBase):
    """Direct use of the network with no fault handling, for comparison runs."""

    def __init__(self, world: World, topo: CartTopology, app_rank: int):
        self.world = world
        self.topo = topo
        self.app_rank = app_rank
        self.failed = frozenset()
        self.repair_count = 0

    def allreduce_sum(self, value: float):
        return (yield AllreduceSum(self.topo.bound_comm, value))

    def guarded_exchange(self, dim: int, direction: int, send):
        peer = self.direct_peer(dim, direction)
        if peer is None:
            return send
        return (yield SendRecvReplace(self.topo.bound_comm, self.topo.world_ranks[peer], send))

    def exchange_or_skip(self, dim: int, direction: int, payload):
        peer = self.direct_peer(dim, direction)
        if peer is None:
            return None
        return (yield SendRecvReplace(self.topo.bound_comm, self.topo.world_ranks[peer], payload))


class ResilienceContext(_ContextBase):
    """Per-process interposition state.

    ``app_rank`` is the topology rank the application sees and never changes.
    ``internal_comm`` is replaced on every repair, and ``failed`` holds the
    failed topology ranks as of the last repair.
    """

    def __init__(self, world: World, topo: CartTopology, app_rank: int, strategy: Strategy | None = None):
        self.world = world
        self.topo = topo
        self.app_rank = app_rank
        self.strategy = strategy or Strategy.mirror()
        self.internal_comm = topo.bound_comm
        self.failed = frozenset()
        self.repair_count = 0

    @property
    def bridging(self) -> bool:
        return self.strategy.bridges

    def _w(self, topo_rank: int) -> int:
        return self.topo.world_ranks[topo_rank]

    def repair(self, err: CommError | None = None):
        old = self.internal_comm
        yield Revoke(old)
        new = yield Shrink(old)
        members = self.world.comm(new).members
        if self.world_rank not in members:
            raise NoSurvivorsError(f"rank {self.world_rank} missing from repaired communicator")
        self.internal_comm = new
        self.topo.rebind(new)
        live = set(members)
        self.failed = frozenset(r for r, w in enumerate(self.topo.world_ranks) if w not in live)
        self.repair_count += 1

    def transparent_call(self, make_request: Callable[[int], Any]):
        """Issue ``make_request(comm)``; on a communication error repair and retry once."""
        try:
            return (yield make_request(self.internal_comm))
        except CommError as err:
            yield from self.repair(err)
        return (yield make_request(self.internal_comm))

    def allreduce_sum(self, value: float):
        return (yield from self.transparent_call(lambda comm: AllreduceSum(comm, value)))

    def guarded_exchange(self, dim: int, direction: int, send):
        try:
            return (yield from self._exchange_once(dim, direction, send))
        except CommError as err:
            yield from self.repair(err)
        return (yield from self._exchange_once(dim, direction, send))

    def _exchange_once(self, dim, direction, send):
        direct = self.direct_peer(dim, direction)
        if direct is None:
            # open boundary: nothing to exchange
            return send
        if direct not in self.failed:
            return (yield SendRecvReplace(self.internal_comm, self._w(direct), send))

        name = self.strategy.name
        if name is StrategyName.DEFAULT:
            return np.full(np.shape(send), self.strategy.fill_value, dtype=float)
        if name is StrategyName.MIRROR:
            return send
        bridged = cart_shift(self.topo, self.app_rank, dim, direction, self.failed)[1]
        if bridged is None:
            return send
        other = yield SendRecvReplace(self.internal_comm, self._w(bridged), send)
        if name is StrategyName.BRIDGE:
            return other
        w = self.strategy.weight
        return (1.0 - w) * np.asarray(send, dtype=float) + w * np.asarray(other, dtype=float)

    def exchange_or_skip(self, dim: int, direction: int, payload):
        """Exchange with the direct neighbour only; ``None`` if it is gone."""
        try:
            return (yield from self._skip_once(dim, direction, payload))
        except CommError as err:
            yield from self.repair(err)
        return (yield from self._skip_once(dim, direction, payload))

    def _skip_once(self, dim, direction, payload):
        peer = self.direct_peer(dim, direction)
        if peer is None or peer in self.failed:
            return None
        return (yield SendRecvReplace(self.internal_comm, self._w(peer), payload))
