"""Agent embodiment: the density sensor and the force motor.

An agent owns a fixed set of member entities.  Sensing produces a coarse
egocentric occupancy grid centered on the body's inertia-weighted
centroid: one channel counts positive entities in the window, the other
counts negative ones.  Acting submits one force vector per member, which
is validated, clamped to the per-member cap, and converted to
acceleration.  Resolution and the force cap are the whole information
bottleneck between agent and world, so nothing here may expose law
coefficients or exact entity coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canon import canonical_hash
from .dynamics import minimal_image
from .errors import ConfigError, ContractViolation
from .worldgen import World, wrap_positions


@dataclass
class BodySpec:
    """Which entities an agent controls and how sharply it can see and push."""

    member_ids: tuple[int, ...]
    resolution: int = 8
    window_halfwidth: float = 8.0
    f_max: float = 4.0

    def validate(self, n_entities: int | None = None) -> None:
        if not self.member_ids:
            raise ConfigError("body must have at least one member entity")
        if len(set(self.member_ids)) != len(self.member_ids):
            raise ConfigError("body member ids must be distinct")
        if any(i < 0 for i in self.member_ids):
            raise ConfigError("body member ids must be nonnegative")
        if n_entities is not None and any(i >= n_entities for i in self.member_ids):
            raise ConfigError("body member id out of range for this world")
        if self.resolution < 1:
            raise ConfigError("sensor resolution must be >= 1")
        if self.window_halfwidth <= 0:
            raise ConfigError("sensor window_halfwidth must be > 0")
        if self.f_max <= 0:
            raise ConfigError("f_max must be > 0")

    def to_dict(self) -> dict:
        return {
            "member_ids": list(self.member_ids),
            "resolution": self.resolution,
            "window_halfwidth": self.window_halfwidth,
            "f_max": self.f_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BodySpec":
        return cls(
            member_ids=tuple(d["member_ids"]),
            resolution=d["resolution"],
            window_halfwidth=d["window_halfwidth"],
            f_max=d["f_max"],
        )


@dataclass
class SenseGrid:
    """One sensor reading: tick, body centroid, and the two-channel grid."""

    tick: int
    centroid: np.ndarray
    grid: np.ndarray  # (R, R, 2): channel 0 positive, channel 1 negative

    def to_payload(self) -> dict:
        return {"tick": self.tick, "grid": self.grid.tolist()}

    def hash(self) -> str:
        return canonical_hash(
            {"tick": self.tick, "centroid": self.centroid.tolist(),
             "grid": self.grid.tolist()}
        )


def body_centroid(world: World, body: BodySpec) -> np.ndarray:
    """Inertia-weighted body center, minimal-image relative to the first member.

    Anchoring keeps the centroid stable when the body straddles the wrap
    seam; the plain coordinate mean would jump to the far side.
    """
    rows = np.array(body.member_ids, dtype=np.intp)
    anchor = world.positions[rows[0]]
    offsets = minimal_image(world.positions[rows] - anchor, world.spec.arena_extent)
    weights = world.inertia[rows]
    mean_offset = (offsets * weights[:, None]).sum(axis=0) / weights.sum()
    return wrap_positions(anchor + mean_offset, world.spec.arena_extent)


def cell_index(offset: float, halfwidth: float, resolution: int) -> int:
    """Map a window coordinate in [-halfwidth, halfwidth) to a cell.

    A point exactly on an interior cell edge belongs to the lower cell.
    """
    width = 2.0 * halfwidth / resolution
    raw = int(np.ceil((offset + halfwidth) / width)) - 1
    return min(resolution - 1, max(0, raw))


def sense(world: World, body: BodySpec) -> SenseGrid:
    """Read the egocentric density grid at the current tick.

    Counts every basic entity (members included) whose minimal-image
    offset from the centroid lies inside the square window.
    """
    body.validate(world.n_entities)
    if world.spec.dim != 2:
        raise ContractViolation("the grid sensor is defined for dim == 2 worlds")
    res = body.resolution
    half = body.window_halfwidth
    center = body_centroid(world, body)
    grid = np.zeros((res, res, 2))
    offsets = minimal_image(world.positions - center, world.spec.arena_extent)
    inside = np.all((offsets >= -half) & (offsets < half), axis=1)
    for row in np.nonzero(inside)[0]:
        ix = cell_index(float(offsets[row, 0]), half, res)
        iy = cell_index(float(offsets[row, 1]), half, res)
        channel = 0 if world.polarity[row] > 0 else 1
        grid[ix, iy, channel] += 1.0
    return SenseGrid(tick=world.tick, centroid=center, grid=grid)


def grid_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Root-mean-square cell difference between two sensor grids."""
    if a.shape != b.shape:
        raise ContractViolation("grid shapes differ")
    diff = a - b
    return float(np.sqrt((diff * diff).mean()))


def clamp_forces(forces: np.ndarray, f_max: float) -> np.ndarray:
    """Scale any member force whose magnitude exceeds the cap back onto it."""
    norms = np.sqrt((forces * forces).sum(axis=1))
    over = norms > f_max
    if over.any():
        scale = np.where(over, f_max / np.where(norms > 0, norms, 1.0), 1.0)
        forces = forces * scale[:, None]
    return forces


def validate_forces(forces, body: BodySpec, dim: int) -> np.ndarray:
    """Check an action's shape and finiteness, then clamp it to f_max."""
    arr = np.asarray(forces, dtype=np.float64)
    if arr.shape != (len(body.member_ids), dim):
        raise ContractViolation(
            f"action must be shape ({len(body.member_ids)}, {dim}), got {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ContractViolation("action forces must be finite")
    return clamp_forces(arr, body.f_max)


def forces_to_accel(world: World, body: BodySpec, forces: np.ndarray) -> np.ndarray:
    """Expand validated member forces into a world-sized acceleration array."""
    accel = np.zeros_like(world.positions)
    rows = np.array(body.member_ids, dtype=np.intp)
    accel[rows] = forces / world.inertia[rows][:, None]
    return accel
