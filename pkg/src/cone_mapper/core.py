"""Shared geometric primitives: positions, sensor poses, Compton cones and the ground grid.

All types in this module are immutable after construction and safe to share
between concurrent readers. Angles are radians, distances are meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    """A scenario parameter (grid extent, resolution, ...) is outside its valid range."""


# Axis vectors whose norm deviates from 1 by more than this are rejected;
# smaller deviations are silently renormalized.
AXIS_UNIT_TOL = 1e-6

# Below this deviation the vector is kept bit-for-bit: renormalizing a vector
# that is already unit to machine precision would wiggle the last bit, and
# cones re-read from a log must equal the cones that were written.
_AXIS_EXACT_TOL = 1e-12


@dataclass(frozen=True)
class Position3:
    """A point in the world frame. Coordinates must be finite."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"position coordinates must be finite, got {(self.x, self.y, self.z)}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @staticmethod
    def from_array(a) -> "Position3":
        return Position3(float(a[0]), float(a[1]), float(a[2]))

    def distance_to(self, other: "Position3") -> float:
        return math.sqrt((self.x - other.x) ** 2 + (self.y - other.y) ** 2 + (self.z - other.z) ** 2)


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Body-to-world rotation for intrinsic z-y-x angles (yaw, then pitch, then roll)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


@dataclass(frozen=True)
class SensorPose:
    """Oriented sensor pose: a world position and three intrinsic z-y-x rotation angles.

    The stored convention is (yaw, pitch, roll) applied intrinsically about
    z, then y, then x; each angle must lie in [-pi, pi].
    """

    position: Position3
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            a = getattr(self, name)
            if not (-math.pi <= a <= math.pi):
                raise ValueError(f"{name} must lie in [-pi, pi], got {a!r}")

    def rotation(self) -> np.ndarray:
        """Body-to-world rotation matrix."""
        return rotation_matrix(self.yaw, self.pitch, self.roll)


def _as_unit_axis(axis) -> np.ndarray:
    a = np.asarray(axis, dtype=float).reshape(3).copy()
    norm = float(np.linalg.norm(a))
    if abs(norm - 1.0) > AXIS_UNIT_TOL:
        raise ValueError(f"cone axis must be a unit vector, got norm {norm!r}")
    if abs(norm - 1.0) > _AXIS_EXACT_TOL:
        a /= norm
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ComptonCone:
    """One Compton measurement: the set of candidate source directions forms a cone.

    The cone has its apex at ``apex_pose.position``, a unit ``axis`` in the
    world frame, and half-angle ``opening_angle`` in (0, pi).
    """

    apex_pose: SensorPose
    axis: np.ndarray
    opening_angle: float
    timestamp: float
    agent_id: int

    def __post_init__(self):
        object.__setattr__(self, "axis", _as_unit_axis(self.axis))
        if not (0.0 < self.opening_angle < math.pi):
            raise ValueError(f"opening angle must lie in (0, pi), got {self.opening_angle!r}")
        if self.timestamp < 0.0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp!r}")

    @property
    def apex(self) -> Position3:
        return self.apex_pose.position


@dataclass(frozen=True)
class Viewpoint:
    """A sampled sensor pose along an agent trajectory.

    Streams of viewpoints must carry strictly increasing timestamps per agent;
    consumers enforce the ordering when they ingest a stream.
    """

    pose: SensorPose
    timestamp: float
    agent_id: int


class GridMap:
    """Discretization of the candidate-source area into nx*ny square cells.

    Cells are enumerated row-major from the origin (x varies fastest) with
    0-based indices j in [0, J). Each cell carries a terrain elevation; cell
    centers sit at origin + ((ix + 0.5) r, (iy + 0.5) r, height).
    """

    def __init__(self, origin: Position3, resolution: float, nx: int, ny: int, heights=None):
        if resolution <= 0.0:
            raise ConfigurationError(f"grid resolution must be > 0, got {resolution!r}")
        if nx < 1 or ny < 1:
            raise ConfigurationError(f"grid must have at least one cell, got nx={nx}, ny={ny}")
        self.origin = origin
        self.resolution = float(resolution)
        self.nx = int(nx)
        self.ny = int(ny)
        if heights is None:
            h = np.zeros((self.ny, self.nx))
        else:
            h = np.asarray(heights, dtype=float)
            if h.ndim == 0:
                h = np.full((self.ny, self.nx), float(h))
            elif h.shape == (self.ny * self.nx,):
                h = h.reshape(self.ny, self.nx)
            elif h.shape != (self.ny, self.nx):
                raise ConfigurationError(
                    f"heights shape {h.shape} does not match grid ({self.ny}, {self.nx})"
                )
            h = h.copy()
        h.flags.writeable = False
        self.heights = h
        self._centers = None

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def centers(self) -> np.ndarray:
        """All cell centers as a read-only (J, 3) array, row-major."""
        if self._centers is None:
            ix = np.arange(self.nx)
            iy = np.arange(self.ny)
            gx = self.origin.x + (ix + 0.5) * self.resolution
            gy = self.origin.y + (iy + 0.5) * self.resolution
            xx, yy = np.meshgrid(gx, gy)
            zz = self.origin.z + self.heights
            c = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
            c.flags.writeable = False
            self._centers = c
        return self._centers

    def cell_index(self, ix: int, iy: int) -> int:
        return iy * self.nx + ix

    def cell_ixy(self, j: int) -> tuple[int, int]:
        return j % self.nx, j // self.nx

    def cell_center(self, j: int) -> Position3:
        """Center of cell j; raises IndexError outside [0, J)."""
        if not (0 <= j < self.n_cells):
            raise IndexError(f"cell index {j} out of range [0, {self.n_cells})")
        return Position3.from_array(self.centers()[j])

    def nearest_cell(self, position: Position3) -> int:
        """Index of the cell containing (or nearest to) the position's x-y footprint."""
        ix = int(math.floor((position.x - self.origin.x) / self.resolution))
        iy = int(math.floor((position.y - self.origin.y) / self.resolution))
        ix = min(max(ix, 0), self.nx - 1)
        iy = min(max(iy, 0), self.ny - 1)
        return self.cell_index(ix, iy)

    def height_at(self, x: float, y: float) -> float:
        """Terrain elevation at (x, y), using the nearest cell (clamped at the border)."""
        j = self.nearest_cell(Position3(x, y, 0.0))
        ix, iy = self.cell_ixy(j)
        return float(self.origin.z + self.heights[iy, ix])


def grid_from_config(
    origin: Position3,
    extent_x: float,
    extent_y: float,
    resolution: float,
    heights=None,
) -> GridMap:
    """Build a grid covering an extent_x * extent_y rectangle from the origin corner.

    Cell counts round up so the rectangle is fully covered.
    """
    if extent_x <= 0.0 or extent_y <= 0.0:
        raise ConfigurationError(f"extents must be > 0, got ({extent_x!r}, {extent_y!r})")
    if resolution <= 0.0:
        raise ConfigurationError(f"resolution must be > 0, got {resolution!r}")
    nx = int(math.ceil(extent_x / resolution))
    ny = int(math.ceil(extent_y / resolution))
    return GridMap(origin, resolution, nx, ny, heights)


def perpendicular_frame(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane perpendicular to a unit direction."""
    d = np.asarray(direction, dtype=float)
    ref = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2


def polar_angles(pose: SensorPose, target: Position3) -> tuple[float, float]:
    """Direction from the sensor to a target, in detector-body polar coordinates.

    Returns (phi, theta) with theta in [0, pi] measured from the body +z axis
    and phi in [-pi, pi] the azimuth in the body x-y plane.
    """
    d = target.as_array() - pose.position.as_array()
    n = float(np.linalg.norm(d))
    if n == 0.0:
        raise ValueError("target coincides with the sensor position")
    body = pose.rotation().T @ (d / n)
    theta = math.acos(min(1.0, max(-1.0, float(body[2]))))
    phi = math.atan2(float(body[1]), float(body[0]))
    return phi, theta


def polar_angles_many(pose: SensorPose, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`polar_angles` for an (N, 3) array of targets.

    Zero-length directions are not checked here; callers mask coincident
    points themselves.
    """
    d = np.asarray(targets, dtype=float) - pose.position.as_array()
    n = np.linalg.norm(d, axis=1)
    safe = np.where(n > 0.0, n, 1.0)
    body = (pose.rotation().T @ (d / safe[:, None]).T).T
    theta = np.arccos(np.clip(body[:, 2], -1.0, 1.0))
    phi = np.arctan2(body[:, 1], body[:, 0])
    return phi, theta
