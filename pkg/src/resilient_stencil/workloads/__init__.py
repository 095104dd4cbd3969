from .diffusion import FieldTile, diffusion_step, exchange_halos, initial_field, local_mass, split_field
from .particles import (
    PARTICLE_DTYPE,
    Geometry,
    RoutingLivelockError,
    advect_particles,
    decode_particles,
    encode_particles,
    exchange_particles,
    forward_all,
    move_particles,
    route_particles,
    seed_particles,
)
from .program import ConservationLedger, RankState, iteration_program
