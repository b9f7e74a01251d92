"""Scripted debris: analytic obstacle motions and a synthetic grid renderer.

Motion families (all evaluable in closed form at any t >= 0, and all exactly
linear on the lifted state [p, v, 1]):

  ballistic    p(t) = p0 + v0 t
  sinusoidal   p(t) = center + amplitude * sin(rate t + phase)   (per axis)
  circular     p(t) = center + radius [cos(rate t + phase), sin(...), 0]
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import InvalidInputError

Array = np.ndarray


@dataclass(frozen=True)
class BallisticMotion:
    p0: Array
    v0: Array

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float).reshape(3))
        object.__setattr__(self, "v0", np.asarray(self.v0, dtype=float).reshape(3))

    def position(self, t: float) -> Array:
        return self.p0 + self.v0 * t

    def velocity(self, t: float) -> Array:
        return self.v0.copy()


@dataclass(frozen=True)
class SinusoidalMotion:
    center: Array
    amplitude: Array
    rate: float
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "amplitude", np.asarray(self.amplitude, dtype=float).reshape(3))

    def position(self, t: float) -> Array:
        return self.center + self.amplitude * np.sin(self.rate * t + self.phase)

    def velocity(self, t: float) -> Array:
        return self.amplitude * self.rate * np.cos(self.rate * t + self.phase)


@dataclass(frozen=True)
class CircularMotion:
    center: Array
    radius: float
    rate: float
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))

    def position(self, t: float) -> Array:
        a = self.rate * t + self.phase
        return self.center + self.radius * np.array([np.cos(a), np.sin(a), 0.0])

    def velocity(self, t: float) -> Array:
        a = self.rate * t + self.phase
        return self.radius * self.rate * np.array([-np.sin(a), np.cos(a), 0.0])


Motion = Union[BallisticMotion, SinusoidalMotion, CircularMotion]


@dataclass(frozen=True)
class Obstacle:
    radius: float
    motion: Motion

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidInputError("obstacle radius must be positive")


@dataclass(frozen=True)
class DebrisField:
    obstacles: Tuple[Obstacle, ...]

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def __len__(self) -> int:
        return len(self.obstacles)

    @property
    def radii(self) -> Array:
        return np.array([o.radius for o in self.obstacles])


def debris_positions(field: DebrisField, t: float) -> list[tuple[Array, float]]:
    """Exact (center, radius) of every obstacle at time t."""
    if t < 0:
        raise InvalidInputError("debris motion is defined for t >= 0")
    return [(o.motion.position(t), o.radius) for o in field.obstacles]


def debris_centers(field: DebrisField, t: float) -> Array:
    """Obstacle centers stacked as (k, 3)."""
    if len(field) == 0:
        return np.zeros((0, 3))
    return np.stack([o.motion.position(t) for o in field.obstacles])


def debris_states(field: DebrisField, t: float) -> Array:
    """Per-obstacle [position, velocity] rows, shape (k, 6)."""
    if len(field) == 0:
        return np.zeros((0, 6))
    return np.stack([
        np.concatenate([o.motion.position(t), o.motion.velocity(t)])
        for o in field.obstacles
    ])


# ---------------------------------------------------------------------------
# Synthetic observations
# ---------------------------------------------------------------------------

_PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


@dataclass(frozen=True)
class ObservationSpec:
    """Occupancy-grid camera stand-in: obstacles project orthographically onto
    an axis plane; cells whose center falls inside a projected disc read 1,
    plus per-cell Gaussian noise."""

    rows: int
    cols: int
    plane: str
    extent: Array  # (2, 2): [[u_min, u_max], [v_min, v_max]]
    noise_sigma: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "extent", np.asarray(self.extent, dtype=float).reshape(2, 2))
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("grid must have at least one row and column")
        if self.plane not in _PLANES:
            raise InvalidInputError(f"plane must be one of {sorted(_PLANES)}")
        if np.any(self.extent[:, 1] <= self.extent[:, 0]):
            raise InvalidInputError("extent must have positive size")

    @property
    def size(self) -> int:
        return self.rows * self.cols


def render_observation(field: DebrisField, spec: ObservationSpec, t: float) -> Array:
    """Flattened (row-major) noisy occupancy grid at time t.

    Deterministic: the noise stream is derived from (spec.seed, t), so
    identical calls are bit-identical.
    """
    iu, iv = _PLANES[spec.plane]
    (umin, umax), (vmin, vmax) = spec.extent
    u = umin + (np.arange(spec.cols) + 0.5) * (umax - umin) / spec.cols
    v = vmin + (np.arange(spec.rows) + 0.5) * (vmax - vmin) / spec.rows
    UU, VV = np.meshgrid(u, v)  # (rows, cols)
    grid = np.zeros((spec.rows, spec.cols))
    for center, radius in debris_positions(field, t):
        d2 = (UU - center[iu]) ** 2 + (VV - center[iv]) ** 2
        grid[d2 <= radius * radius] = 1.0
    t_bits = int(np.float64(t).view(np.uint64))
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, t_bits]))
    grid = grid + spec.noise_sigma * rng.standard_normal(grid.shape)
    return grid.reshape(-1)
