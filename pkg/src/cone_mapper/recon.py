"""List-mode iterative reconstruction of source intensity on a grid.

Each cone measurement contributes one sparse system-matrix row of per-cell
detection weights. Accumulated per-cell sensitivity (how long and how well
each cell has been observed) normalizes the estimate so that poorly observed
regions are not mistaken for cold ones. The estimator is the classic
expectation-maximization update for list-mode Poisson data; every iteration
preserves total expected counts and never drives an estimate negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cone_mapper.core import ComptonCone, GridMap, Position3, Viewpoint, polar_angles_many
from cone_mapper.physics import AttenuationModel, LookupTable, detection_kernel

# Cells closer to a cone apex than this are treated as part of the sensor
# itself and get zero weight (the inverse-square factor diverges there).
APEX_EXCLUSION_M = 1e-6


@dataclass(frozen=True)
class ProjectionParams:
    """Shared projection settings: cone-width uncertainty, attenuation, sparsity.

    ``sigma`` is the standard deviation (radians) of the angular distance
    between a cell direction and the cone surface; ``sparsity_rel`` drops row
    entries below that fraction of the row maximum.
    """

    sigma: float = 0.17
    attenuation: AttenuationModel = field(default_factory=AttenuationModel)
    sparsity_rel: float = 1e-3

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be > 0, got {self.sigma!r}")
        if self.sparsity_rel < 0.0:
            raise ValueError(f"sparsity_rel must be >= 0, got {self.sparsity_rel!r}")


@dataclass(frozen=True)
class SystemRow:
    """Sparse weights of one cone over grid cells: parallel arrays (cells, weights)."""

    cells: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=np.int64)
        w = np.asarray(self.weights, dtype=float)
        if c.shape != w.shape or c.ndim != 1:
            raise ValueError("cells and weights must be matching 1D arrays")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise ValueError("row weights must be finite and >= 0")
        c.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "cells", c)
        object.__setattr__(self, "weights", w)

    @property
    def is_empty(self) -> bool:
        return self.cells.size == 0


@dataclass
class IntensityField:
    """Per-cell intensity estimate with the number of update iterations applied."""

    values: np.ndarray
    n_iterations: int = 0
    skipped_rows: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0.0) or not np.all(np.isfinite(v)):
            raise ValueError("intensity values must be finite and >= 0")
        self.values = v


def uniform_intensity(grid: GridMap, value: float = 1.0) -> IntensityField:
    return IntensityField(np.full(grid.n_cells, float(value)))


class SensitivityField:
    """Accumulated per-cell detection sensitivity over all processed viewpoints.

    Entries only ever grow. The field remembers the last processed timestamp
    per agent so that each new viewpoint is weighted by the actual time gap
    since that agent's previous one; an agent's first viewpoint is weighted by
    the nominal sampling period ``default_dt``.
    """

    def __init__(self, grid: GridMap, default_dt: float):
        if default_dt <= 0.0:
            raise ValueError(f"default_dt must be > 0, got {default_dt!r}")
        self.values = np.zeros(grid.n_cells)
        self.default_dt = float(default_dt)
        self.last_seen: dict[int, float] = {}

    def copy(self) -> "SensitivityField":
        out = SensitivityField.__new__(SensitivityField)
        out.values = self.values.copy()
        out.default_dt = self.default_dt
        out.last_seen = dict(self.last_seen)
        return out


def sensitivity_update(
    sens: SensitivityField,
    new_viewpoints: list[Viewpoint],
    grid: GridMap,
    params: ProjectionParams,
    table: LookupTable,
) -> SensitivityField:
    """Fold a batch of new viewpoints into the sensitivity field, in place.

    Viewpoints must arrive timestamp-ordered per agent and strictly after
    anything already processed for that agent; violating either raises
    ValueError. Applying two batches one after the other gives exactly the
    same field as applying their concatenation at once.
    """
    centers = grid.centers()
    for vp in new_viewpoints:
        prev = sens.last_seen.get(vp.agent_id)
        if prev is None:
            gap = sens.default_dt
        else:
            gap = vp.timestamp - prev
            if gap <= 0.0:
                raise ValueError(
                    f"viewpoint for agent {vp.agent_id} at t={vp.timestamp} is not after "
                    f"the last processed one at t={prev}"
                )
        diff = centers - vp.pose.position.as_array()
        dist = np.linalg.norm(diff, axis=1)
        phi, theta = polar_angles_many(vp.pose, centers)
        ok = dist >= APEX_EXCLUSION_M
        contrib = np.zeros_like(dist)
        contrib[ok] = detection_kernel(table, params.attenuation, dist[ok], phi[ok], theta[ok])
        sens.values += contrib * gap
        sens.last_seen[vp.agent_id] = vp.timestamp
    return sens


def system_row(
    cone: ComptonCone,
    grid: GridMap,
    params: ProjectionParams,
    table: LookupTable,
) -> SystemRow:
    """Sparse detection weights of one cone over all grid cells.

    A cell's weight combines attenuation and inverse-square falloff from the
    apex, the direction-dependent table value, and a Gaussian penalty on the
    angular distance between the cell direction and the cone surface. Entries
    below ``sparsity_rel`` times the row maximum are dropped; cells at the
    apex itself get zero.
    """
    centers = grid.centers()
    apex = cone.apex.as_array()
    diff = centers - apex
    dist = np.linalg.norm(diff, axis=1)
    ok = dist >= APEX_EXCLUSION_M

    t = np.zeros(grid.n_cells)
    if np.any(ok):
        u = diff[ok] / dist[ok, None]
        cos_ang = np.clip(u @ cone.axis, -1.0, 1.0)
        delta = np.abs(np.arccos(cos_ang) - cone.opening_angle)
        surface = np.exp(-(delta * delta) / (2.0 * params.sigma * params.sigma))
        phi, theta = polar_angles_many(cone.apex_pose, centers)
        t[ok] = surface * detection_kernel(
            table, params.attenuation, dist[ok], phi[ok], theta[ok]
        )

    peak = t.max(initial=0.0)
    keep = t >= params.sparsity_rel * peak if peak > 0.0 else np.zeros_like(t, dtype=bool)
    keep &= t > 0.0
    cells = np.nonzero(keep)[0]
    return SystemRow(cells, t[cells])


def _stack_rows(rows: list[SystemRow]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate sparse rows into (row_ids, cells, weights) for vector ops."""
    row_ids = np.concatenate(
        [np.full(r.cells.size, i, dtype=np.int64) for i, r in enumerate(rows)]
    )
    cells = np.concatenate([r.cells for r in rows])
    weights = np.concatenate([r.weights for r in rows])
    return row_ids, cells, weights


def mlem(
    init: IntensityField,
    rows: list[SystemRow],
    sens: SensitivityField,
    n_iter: int,
) -> IntensityField:
    """Run n_iter expectation-maximization updates and return a fresh field.

    Cells with zero sensitivity are frozen at zero and excluded from the
    update. Rows whose expected count under the current estimate is zero are
    skipped for that iteration and tallied in ``skipped_rows`` on the result.
    """
    if n_iter < 1:
        raise ValueError(f"n_iter must be >= 1, got {n_iter!r}")
    if not rows:
        raise ValueError("mlem needs at least one measurement row")

    s = sens.values
    lam = np.asarray(init.values, dtype=float).copy()
    live = s > 0.0
    lam[~live] = 0.0

    row_ids, cells, weights = _stack_rows(rows)
    n_rows = len(rows)
    skipped = 0
    for _ in range(n_iter):
        expected = np.bincount(row_ids, weights=weights * lam[cells], minlength=n_rows)
        good = expected > 0.0
        skipped += int(n_rows - np.count_nonzero(good))
        inv = np.zeros(n_rows)
        inv[good] = 1.0 / expected[good]
        back = np.bincount(cells, weights=weights * inv[row_ids], minlength=lam.size)
        new = np.zeros_like(lam)
        new[live] = (lam[live] / s[live]) * back[live]
        lam = new
    return IntensityField(lam, n_iterations=init.n_iterations + n_iter, skipped_rows=skipped)


def log_likelihood(lam: IntensityField, rows: list[SystemRow], sens: SensitivityField) -> float:
    """List-mode Poisson log-likelihood of the estimate (up to a data constant).

    Rows with zero expected count are excluded, matching their exclusion from
    the update itself.
    """
    values = lam.values
    total = -float(np.dot(sens.values, values))
    for r in rows:
        expected = float(np.dot(r.weights, values[r.cells]))
        if expected > 0.0:
            total += math.log(expected)
    return total


@dataclass(frozen=True)
class PeakResult:
    """Strict local maxima of an intensity field, strongest first."""

    peaks: tuple[tuple[Position3, float], ...]
    requested: int

    @property
    def shortfall(self) -> bool:
        """True when fewer maxima exist than were asked for."""
        return len(self.peaks) < self.requested

    def positions(self) -> list[Position3]:
        return [p for p, _ in self.peaks]


def local_maxima(
    lam: IntensityField,
    grid: GridMap,
    n: int,
    sens: SensitivityField | None = None,
    s_max: float | None = None,
) -> PeakResult:
    """Up to n strongest strict 8-neighborhood local maxima of the estimate.

    When a sensitivity field and ceiling are given, maxima in cells already
    observed beyond the ceiling are omitted (they are settled, not worth
    another look). Sorting is by value descending, ties by lower cell index.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n!r}")
    v = lam.values.reshape(grid.ny, grid.nx)
    padded = np.full((grid.ny + 2, grid.nx + 2), -np.inf)
    padded[1:-1, 1:-1] = v
    is_max = np.ones_like(v, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_max &= v > padded[1 + dy : grid.ny + 1 + dy, 1 + dx : grid.nx + 1 + dx]
    idx = np.nonzero(is_max.ravel())[0]
    if sens is not None and s_max is not None:
        idx = idx[sens.values[idx] < s_max]
    order = sorted(idx, key=lambda j: (-lam.values[j], j))[:n]
    peaks = tuple((grid.cell_center(int(j)), float(lam.values[j])) for j in order)
    return PeakResult(peaks, requested=n)


@dataclass(frozen=True)
class LocalizationMetrics:
    """Distance from each true source to its nearest estimate, plus summaries."""

    per_source_error: tuple[float, ...]
    rmse: float
    n_within: int
    tolerance: float

    @property
    def rmse_defined(self) -> bool:
        return math.isfinite(self.rmse)


def localization_metrics(
    estimates: list[Position3],
    truth: list[Position3],
    tolerance: float = 2.0,
) -> LocalizationMetrics:
    """Per-source nearest-estimate errors, their RMSE, and the count within tolerance.

    An empty estimate list yields infinite errors and an undefined (infinite)
    RMSE rather than an exception, so callers can log early mission cycles.
    """
    if not truth:
        raise ValueError("at least one ground-truth source is required")
    errors = []
    for src in truth:
        if estimates:
            errors.append(min(src.distance_to(e) for e in estimates))
        else:
            errors.append(math.inf)
    if all(math.isfinite(e) for e in errors):
        rmse = math.sqrt(sum(e * e for e in errors) / len(errors))
    else:
        rmse = math.inf
    n_within = sum(1 for e in errors if e < tolerance)
    return LocalizationMetrics(tuple(errors), rmse, n_within, tolerance)


def save_field(values: np.ndarray, grid: GridMap, path) -> None:
    """Dump one per-cell field as text: `grid nx ny r ox oy` then values row-major."""
    v = np.asarray(values, dtype=float)
    if v.shape != (grid.n_cells,):
        raise ValueError(f"field shape {v.shape} does not match grid with {grid.n_cells} cells")
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            f"grid {grid.nx} {grid.ny} {format(grid.resolution, '.17g')} "
            f"{format(grid.origin.x, '.17g')} {format(grid.origin.y, '.17g')}\n"
        )
        for row in v.reshape(grid.ny, grid.nx):
            f.write(" ".join(format(x, ".17g") for x in row) + "\n")


def load_field(path) -> tuple[np.ndarray, dict]:
    """Read a field dump; returns (values, header) with header keys nx ny r ox oy."""
    with open(path, "r", encoding="utf-8") as f:
        tokens = f.read().split()
    if len(tokens) < 6 or tokens[0] != "grid":
        raise ValueError(f"{path}: expected header 'grid nx ny r ox oy'")
    nx, ny = int(tokens[1]), int(tokens[2])
    header = {
        "nx": nx,
        "ny": ny,
        "r": float(tokens[3]),
        "ox": float(tokens[4]),
        "oy": float(tokens[5]),
    }
    body = tokens[6:]
    if len(body) != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {len(body)}")
    return np.array([float(t) for t in body]), header
