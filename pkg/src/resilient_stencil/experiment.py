"""Experiment runner: configuration, the iteration loop, metrics and comparison.

Iteration ``i`` of a run proceeds as:

1. faults planned for ``i`` fire (the rank dies after ``i`` completed steps);
2. an optional injected mass leak is applied;
3. every live rank runs :func:`~resilient_stencil.workloads.iteration_program`,
   whose opening reductions measure the state at the start of the iteration;
4. a :class:`MetricsRecord` is emitted and the stop criterion is checked.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .resilience import PlainContext, ResilienceContext, Strategy, StrategyName
from .simnet import WORLD_COMM, FaultEvent, InvalidConfigError, create_world
from .topology import cart_create
from .workloads import (
    ConservationLedger,
    FieldTile,
    Geometry,
    RankState,
    initial_field,
    iteration_program,
    local_mass,
    seed_particles,
    split_field,
)

__all__ = [
    "CSV_HEADER",
    "DivergenceReport",
    "MetricsRecord",
    "RunConfig",
    "RunResult",
    "SchemaMismatchError",
    "Simulation",
    "compare",
    "load_config",
    "parse_config",
    "read_metrics",
    "run",
    "stop_criterion",
    "write_metrics",
]

CSV_HEADER = (
    "iteration",
    "global_mass",
    "particle_count",
    "discarded_count",
    "live_ranks",
    "probe_metric",
    "l2_vs_reference",
    "wall_time_ms",
)

EXIT_COMPLETED = 0
EXIT_STOPPED = 2
EXIT_NO_SURVIVORS = 3
EXIT_INVALID_CONFIG = 64


class SchemaMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    dims: tuple[int, int] = (8, 8)
    periods: tuple[bool, bool] = (True, True)
    cells_per_tile: tuple[int, int] = (16, 16)
    iterations: int = 600
    workload: str = "diffusion"
    strategy: Strategy = field(default_factory=Strategy.mirror)
    fault_plan: tuple[FaultEvent, ...] = ()
    seed: int = 0
    stop_threshold: float = 0.05
    probe_region: tuple[int, int, int, int] | None = None
    """Inclusive tile ranges ``(x0, x1, y0, y1)``."""
    output_path: str | None = None
    alpha: float = 0.2
    initial: str = "random(0)"
    particles: str = "uniform-density(64)"
    particle_vmax: float = 4.0
    leak: tuple[int, float] | None = None
    """``(iteration, fraction)``: remove that fraction of every tile's mass. Test hook."""
    track_reference: bool = False

    def __post_init__(self):
        if len(self.dims) != 2 or len(self.periods) != 2 or len(self.cells_per_tile) != 2:
            raise InvalidConfigError("workloads are two-dimensional")
        if any(d < 2 for d in self.dims):
            raise InvalidConfigError(f"every grid dimension needs at least 2 tiles, got {self.dims}")
        if any(c < 1 for c in self.cells_per_tile):
            raise InvalidConfigError("cells_per_tile must be positive")
        if self.iterations < 1:
            raise InvalidConfigError("iterations must be >= 1")
        if self.workload not in ("diffusion", "particles", "both"):
            raise InvalidConfigError(f"unknown workload {self.workload!r}")
        if not self.stop_threshold > 0:
            raise InvalidConfigError("stop_threshold must be > 0")
        if not 0.0 < self.alpha <= 0.25:
            raise InvalidConfigError(f"alpha={self.alpha} outside (0, 0.25]")
        n = self.dims[0] * self.dims[1]
        for ev in self.fault_plan:
            if not 0 <= ev.rank < n or ev.at_iteration < 0:
                raise InvalidConfigError(f"fault {ev.rank}@{ev.at_iteration} outside the run")
        if self.probe_region is not None:
            x0, x1, y0, y1 = self.probe_region
            if not (0 <= x0 <= x1 < self.dims[0] and 0 <= y0 <= y1 < self.dims[1]):
                raise InvalidConfigError(f"probe region {self.probe_region} outside grid {self.dims}")
        if self.leak is not None and not 0.0 <= self.leak[1] <= 1.0:
            raise InvalidConfigError("leak fraction must be in [0, 1]")

    @property
    def n_ranks(self) -> int:
        return self.dims[0] * self.dims[1]

    @property
    def has_field(self) -> bool:
        return self.workload in ("diffusion", "both")

    @property
    def has_particles(self) -> bool:
        return self.workload in ("particles", "both")


# -- config file ---------------------------------------------------------------


def _pair(text: str, conv=int) -> tuple:
    parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise InvalidConfigError(f"expected two values, got {text!r}")
    return tuple(conv(p.strip()) for p in parts)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on", "periodic"):
        return True
    if t in ("0", "false", "no", "off", "open"):
        return False
    raise InvalidConfigError(f"not a boolean: {text!r}")


def _region(text: str) -> tuple[int, int, int, int]:
    try:
        xs, ys = text.split(",")
        x0, x1 = (int(v) for v in xs.split(":"))
        y0, y1 = (int(v) for v in ys.split(":"))
    except ValueError as exc:
        raise InvalidConfigError(f"probe_region must look like x0:x1,y0:y1, got {text!r}") from exc
    return x0, x1, y0, y1


def parse_config(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from ``key = value`` lines plus overrides."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    values.update(overrides or {})

    kw: dict = {}
    strategy_kw: dict = {}
    try:
        for key, value in values.items():
            if key == "dims":
                kw["dims"] = _pair(value)
            elif key == "periods":
                kw["periods"] = tuple(_bool(v) for v in value.split(",")) * (1 if "," in value else 2)
            elif key in ("cells", "cells_per_tile"):
                kw["cells_per_tile"] = _pair(value)
            elif key == "iterations":
                kw["iterations"] = int(value)
            elif key == "workload":
                kw["workload"] = value
            elif key == "strategy":
                strategy_kw["name"] = StrategyName(value.lower())
            elif key == "fill_value":
                strategy_kw["fill_value"] = float(value)
            elif key in ("interp_weight", "weight"):
                strategy_kw["weight"] = float(value)
            elif key in ("faults", "fault_plan"):
                kw["fault_plan"] = tuple(FaultEvent.parse(v) for v in value.split(",") if v.strip())
            elif key == "seed":
                kw["seed"] = int(value)
            elif key == "stop_threshold":
                kw["stop_threshold"] = float(value)
            elif key == "probe_region":
                kw["probe_region"] = None if value.lower() in ("", "none") else _region(value)
            elif key in ("output", "output_path"):
                kw["output_path"] = value
            elif key == "alpha":
                kw["alpha"] = float(value)
            elif key == "initial":
                kw["initial"] = value
            elif key == "particles":
                kw["particles"] = value
            elif key == "particle_vmax":
                kw["particle_vmax"] = float(value)
            elif key == "leak":
                it, frac = value.split(":")
                kw["leak"] = (int(it), float(frac))
            elif key == "track_reference":
                kw["track_reference"] = _bool(value)
            else:
                raise InvalidConfigError(f"unknown config key {key!r}")
        if strategy_kw:
            kw["strategy"] = Strategy(**{"name": StrategyName.MIRROR, **strategy_kw})
        return RunConfig(**kw)
    except InvalidConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise InvalidConfigError(str(exc)) from exc


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), overrides)


# -- metrics -------------------------------------------------------------------


@dataclass
class MetricsRecord:
    iteration: int
    global_mass: float
    particle_count: int
    discarded_count: int
    live_ranks: int
    probe_metric: float | None = None
    l2_vs_reference: float | None = None
    wall_time_ms: float = 0.0


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_metrics(records: Sequence[MetricsRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise SchemaMismatchError(f"{path}: unexpected header {header}")
        return [dict(zip(CSV_HEADER, row)) for row in reader]


def stop_criterion(ledger: ConservationLedger, live_fraction: float, threshold: float) -> bool:
    """True when the total strays from the survivors' expected share by more than ``threshold``."""
    baseline = live_fraction * ledger.initial_total
    deviation = abs(ledger.current_total - baseline)
    return deviation / max(abs(baseline), 1e-30) > threshold


# -- simulation ----------------------------------------------------------------


class Simulation:
    """A world of simulated ranks running the configured workloads.

    With ``resilient=False`` the ranks talk to the network directly; any
    failure then aborts the run.
    """

    def __init__(self, config: RunConfig, resilient: bool = True, record_trace: bool = False):
        self.config = config
        self.resilient = resilient
        self.world = create_world(config.n_ranks, config.fault_plan, config.seed, record_trace=record_trace)
        self.geom = Geometry(config.dims, config.cells_per_tile, config.periods)

        tiles = [None] * config.n_ranks
        if config.has_field:
            nx, ny = config.cells_per_tile
            shape = (config.dims[0] * nx, config.dims[1] * ny)
            tiles = split_field(initial_field(config.initial, shape), config.dims, config.cells_per_tile)

        self.ranks: list[RankState] = []
        for r in range(config.n_ranks):
            topo = cart_create(self.world, WORLD_COMM, config.dims, config.periods)
            if resilient:
                ctx = ResilienceContext(self.world, topo, r, config.strategy)
            else:
                ctx = PlainContext(self.world, topo, r)
            state = RankState(ctx)
            if tiles[r] is not None:
                state.tile = FieldTile(r, tiles[r])
            if config.has_particles:
                state.particles = seed_particles(
                    config.particles, self.geom, r, config.seed, config.particle_vmax
                )
            self.ranks.append(state)

        self.ledger = ConservationLedger(
            initial_total=self.observed_mass(),
            initial_particles=sum(len(s.particles) for s in self.ranks),
        )
        self.ledger.current_total = self.ledger.initial_total
        self.status = "running"
        self.stop_iteration: int | None = None
        self._started = False
        self._on_failures(self.world.apply_faults())

    # observers; they read process state directly and do not communicate

    def live(self) -> list[int]:
        return self.world.live_ranks()

    def observed_mass(self) -> float:
        return sum(local_mass(self.ranks[r].tile) for r in self.live() if self.ranks[r].tile is not None)

    def owned_particles(self) -> int:
        return sum(len(self.ranks[r].particles) for r in self.live())

    def discarded(self) -> int:
        return sum(s.discarded for s in self.ranks)

    def probe_metric(self) -> float | None:
        region = self.config.probe_region
        if region is None or not self.config.has_field:
            return None
        x0, x1, y0, y1 = region
        total = 0.0
        ny = self.config.dims[1]
        for tx in range(x0, x1 + 1):
            for ty in range(y0, y1 + 1):
                r = tx * ny + ty
                if not self.world.is_failed(r):
                    total += local_mass(self.ranks[r].tile)
        return total

    def field(self) -> np.ndarray:
        """Global field with failed tiles set to NaN."""
        nx, ny = self.config.cells_per_tile
        out = np.full((self.config.dims[0] * nx, self.config.dims[1] * ny), np.nan)
        for r, s in enumerate(self.ranks):
            if s.tile is None or self.world.is_failed(r):
                continue
            tx, ty = divmod(r, self.config.dims[1])
            out[tx * nx:(tx + 1) * nx, ty * ny:(ty + 1) * ny] = s.tile.interior
        return out

    def _on_failures(self, newly: list[int]) -> None:
        for r in newly:
            s = self.ranks[r]
            if s.tile is not None:
                self.ledger.lost_to_faults += local_mass(s.tile)
            self.ledger.lost_particles += len(s.particles)

    def step(self) -> MetricsRecord | None:
        """Run one iteration. Returns None once the run is over."""
        if self.status != "running":
            return None
        t0 = time.perf_counter()
        if self._started:
            self._on_failures(self.world.advance_iteration())
        self._started = True
        it = self.world.iteration

        if self.config.leak is not None and self.config.leak[0] == it:
            keep = 1.0 - self.config.leak[1]
            for r in self.live():
                tile = self.ranks[r].tile
                if tile is not None:
                    tile.interior *= keep
                    tile.reset_halo()

        live = self.live()
        if not live:
            self.status = "no-survivors"
            self.stop_iteration = it
            return None

        geom = self.geom if self.config.has_particles else None
        # sampled together with the opening reductions
        self.ledger.discarded_count = self.discarded()
        results = self.world.run(
            {
                self.ranks[r].ctx.world_rank: iteration_program(self.ranks[r], self.config.alpha, geom)
                for r in live
            }
        )
        mass, count = results[min(results)]

        self.ledger.current_total = mass
        rec = MetricsRecord(
            iteration=it,
            global_mass=mass,
            particle_count=int(round(count)),
            discarded_count=self.ledger.discarded_count,
            live_ranks=len(live),
            probe_metric=self.probe_metric(),
        )
        if self.config.has_field and stop_criterion(
            self.ledger, len(live) / self.config.n_ranks, self.config.stop_threshold
        ):
            self.status = "stopped-at-threshold"
            self.stop_iteration = it
        elif it + 1 >= self.config.iterations:
            self.status = "completed"
        rec.wall_time_ms = (time.perf_counter() - t0) * 1e3
        return rec

    def records(self) -> Iterator[MetricsRecord]:
        while (rec := self.step()) is not None:
            yield rec


@dataclass
class RunResult:
    status: str
    records: list[MetricsRecord]
    stop_iteration: int | None = None

    @property
    def summary(self) -> str:
        if self.status == "stopped-at-threshold":
            return f"stopped-at-threshold({self.stop_iteration})"
        return self.status

    @property
    def exit_code(self) -> int:
        return {
            "completed": EXIT_COMPLETED,
            "stopped-at-threshold": EXIT_STOPPED,
            "no-survivors": EXIT_NO_SURVIVORS,
        }[self.status]


def run(config: RunConfig, output_path: str | Path | None = None) -> RunResult:
    """Execute ``config`` and write the metrics CSV if an output path is set."""
    sim = Simulation(config)
    ref = None
    if config.track_reference:
        ref = Simulation(replace(config, fault_plan=(), leak=None, track_reference=False))

    records = []
    for rec in sim.records():
        if ref is not None:
            ref.step()
            if config.has_field:
                diff = sim.field() - ref.field()
                rec.l2_vs_reference = math.sqrt(float(np.nansum(diff * diff)))
        records.append(rec)

    path = output_path or config.output_path
    if path:
        write_metrics(records, path)
    return RunResult(sim.status, records, sim.stop_iteration)


# -- comparison ----------------------------------------------------------------


@dataclass
class DivergenceReport:
    """First iteration at which each metric left tolerance (None = never)."""

    probe_metric: int | None
    global_mass: int | None
    particle_count: int | None

    def lines(self) -> list[str]:
        def show(v):
            return "never" if v is None else str(v)

        return [
            f"probe_metric: {show(self.probe_metric)}",
            f"global_mass: {show(self.global_mass)}",
            f"particle_count: {show(self.particle_count)}",
        ]

    @property
    def diverged(self) -> bool:
        return any(v is not None for v in (self.probe_metric, self.global_mass, self.particle_count))


def _first_divergence(pairs, column: str, tolerance: float, eps: float = 1e-30) -> int | None:
    for it, a, b in pairs:
        x, y = a[column], b[column]
        if x == "" and y == "":
            continue
        if (x == "") != (y == ""):
            return it
        x, y = float(x), float(y)
        if abs(x - y) / max(abs(y), eps) > tolerance:
            return it
    return None


def compare(run_csv: str | Path, reference_csv: str | Path, tolerance: float) -> DivergenceReport:
    """Find where a run departs from its reference, metric by metric."""
    run_rows = read_metrics(run_csv)
    ref_rows = {int(r["iteration"]): r for r in read_metrics(reference_csv)}
    pairs = [(int(r["iteration"]), r, ref_rows[int(r["iteration"])]) for r in run_rows if int(r["iteration"]) in ref_rows]
    return DivergenceReport(
        probe_metric=_first_divergence(pairs, "probe_metric", tolerance),
        global_mass=_first_divergence(pairs, "global_mass", tolerance),
        particle_count=_first_divergence(pairs, "particle_count", tolerance),
    )
