"""Deterministic simulation of fault-resilient stencil codes on a process grid."""
from .experiment import (
    DivergenceReport,
    MetricsRecord,
    RunConfig,
    RunResult,
    Simulation,
    compare,
    load_config,
    parse_config,
    run,
    stop_criterion,
)
from .resilience import NoSurvivorsError, PlainContext, ResilienceContext, Strategy, StrategyName
from .routing import Direction, Hop, astar_next_hop, naive_next_hop, needs_astar
from .simnet import (
    AllreduceSum,
    CommError,
    DeadlockError,
    FaultEvent,
    InvalidConfigError,
    ProcFailedError,
    Revoke,
    RevokedError,
    SendRecvReplace,
    Shrink,
    World,
    create_world,
)
from .topology import CartTopology, cart_create, cart_shift, coords_to_rank, rank_to_coords

__version__ = "0.1.0"
