"""What one simulated process does in one iteration."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import FieldTile, diffusion_step, exchange_halos, local_mass
from .particles import Geometry, advect_particles, empty_particles, forward_all


@dataclass
class ConservationLedger:
    initial_total: float = 0.0
    current_total: float = 0.0
    lost_to_faults: float = 0.0
    discarded_count: int = 0
    initial_particles: int = 0
    lost_particles: int = 0
    """Particles owned by ranks at the instant they failed."""


@dataclass
class RankState:
    ctx: object
    tile: FieldTile | None = None
    particles: np.ndarray = field(default_factory=empty_particles)
    discarded: int = 0
    sub_rounds: int = 0


def iteration_program(state: RankState, alpha: float, geom: Geometry | None):
    """One iteration of one rank (generator); returns (global mass, global particle count).

    The two opening reductions double as a liveness check. Any failure since
    the last iteration surfaces here and the whole communicator is repaired
    before neighbour exchanges start.
    """
    ctx = state.ctx
    mass = yield from ctx.allreduce_sum(local_mass(state.tile) if state.tile is not None else 0.0)
    count = yield from ctx.allreduce_sum(float(len(state.particles)))

    if state.tile is not None:
        yield from exchange_halos(ctx, state.tile)
        state.tile = diffusion_step(state.tile, alpha)

    if geom is not None:
        kept, outgoing, dropped = advect_particles(ctx, state.particles, geom)
        owned, dropped_later, rounds = yield from forward_all(ctx, kept, outgoing, geom)
        state.particles = owned
        state.discarded += dropped + dropped_later
        state.sub_rounds = rounds
    return mass, count
