"""Explicit 2D diffusion on per-process tiles with a one-cell halo ring."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FieldTile",
    "diffusion_step",
    "exchange_halos",
    "initial_field",
    "local_mass",
    "split_field",
]

SIDES = ((0, -1), (0, 1), (1, -1), (1, 1))


@dataclass
class FieldTile:
    """Cells owned by one process plus the neighbour values around them.

    ``halo[(dim, sign)]`` holds the neighbour's edge on that side, with the
    same length as the adjacent edge of ``interior``.
    """

    owner: int
    interior: np.ndarray
    halo: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.interior = np.asarray(self.interior, dtype=np.float64)
        if not self.halo:
            self.reset_halo()

    @property
    def shape(self) -> tuple[int, int]:
        return self.interior.shape

    def border(self, dim: int, sign: int) -> np.ndarray:
        idx = -1 if sign > 0 else 0
        edge = self.interior[idx, :] if dim == 0 else self.interior[:, idx]
        return edge.copy()

    def reset_halo(self) -> None:
        """Fill every halo side with the tile's own border."""
        self.halo = {side: self.border(*side) for side in SIDES}

    def copy(self) -> "FieldTile":
        return FieldTile(self.owner, self.interior.copy(), {k: v.copy() for k, v in self.halo.items()})


def local_mass(tile: FieldTile) -> float:
    return float(np.sum(tile.interior))


def diffusion_step(tile: FieldTile, alpha: float) -> FieldTile:
    """One explicit step: ``u + alpha * lap(u)`` with the 5-point Laplacian.

    Needs ``0 < alpha <= 0.25`` and halos exchanged beforehand. The returned
    tile's halo is reset to its own new border.
    """
    if not 0.0 < alpha <= 0.25:
        raise ValueError(f"alpha={alpha} outside the stable range (0, 0.25]")
    u = tile.interior
    nx, ny = u.shape
    p = np.empty((nx + 2, ny + 2))
    p[1:-1, 1:-1] = u
    p[0, 1:-1] = tile.halo[(0, -1)]
    p[-1, 1:-1] = tile.halo[(0, 1)]
    p[1:-1, 0] = tile.halo[(1, -1)]
    p[1:-1, -1] = tile.halo[(1, 1)]
    lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * u
    return FieldTile(tile.owner, u + alpha * lap)


def exchange_halos(ctx, tile: FieldTile):
    """Fill all four halo sides through ``ctx`` (generator)."""
    for dim in (0, 1):
        for sign in ctx.exchange_order(dim):
            tile.halo[(dim, sign)] = yield from ctx.guarded_exchange(dim, sign, tile.border(dim, sign))


_HOT = re.compile(r"hot-spot\(\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*([^)]+)\)")
_RANDOM = re.compile(r"random\(\s*(-?\d+)\s*\)")


def initial_field(text: str, shape: tuple[int, int]) -> np.ndarray:
    """Global initial condition: ``uniform``, ``hot-spot(cx,cy,amp)`` or ``random(seed)``."""
    text = text.strip()
    if text == "uniform":
        return np.ones(shape)
    m = _HOT.fullmatch(text)
    if m:
        cx, cy, amp = int(m[1]), int(m[2]), float(m[3])
        if not (0 <= cx < shape[0] and 0 <= cy < shape[1]):
            raise ValueError(f"hot spot ({cx},{cy}) outside field of shape {shape}")
        out = np.zeros(shape)
        out[cx, cy] = amp
        return out
    m = _RANDOM.fullmatch(text)
    if m:
        return np.random.default_rng(int(m[1])).random(shape)
    raise ValueError(f"unknown initial condition {text!r}")


def split_field(global_field: np.ndarray, dims: tuple[int, int], cells: tuple[int, int]) -> list[np.ndarray]:
    """Cut a global field into per-rank tiles, rank order = row-major over ``dims``."""
    nx, ny = cells
    return [
        global_field[i * nx:(i + 1) * nx, j * ny:(j + 1) * ny].copy()
        for i in range(dims[0])
        for j in range(dims[1])
    ]
