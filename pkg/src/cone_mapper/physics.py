"""Sensor model: scattering kinematics, direction-dependent detection probability, attenuation.

The detector is a thin box. Its probability of producing a usable measurement
for a photon arriving from a given direction is tabulated once (``LookupTable``)
and queried by nearest bin afterwards. A single kernel function combines the
table with air attenuation and inverse-square falloff; both the estimator and
the measurement simulator evaluate detection probability through that one
function so the two sides can never drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cone_mapper.core import ConfigurationError, perpendicular_frame

ELECTRON_REST_KEV = 511.0

# Default table resolution: 10 degree bins.
DEFAULT_N_PHI = 36
DEFAULT_N_THETA = 18

# Default per-meter interaction scale for the chord model. Calibrated so that a
# 2 GBq source at 5 m yields about 0.5 usable measurements per second once
# attenuation (mu = 0.01 1/m) and inverse-square falloff are applied.
DEFAULT_KAPPA = 4.1283e-5


class InfeasibleEnergyError(ValueError):
    """Deposited energies are inconsistent with a single Compton scatter."""


@dataclass(frozen=True)
class ComptonAngle:
    """Scattering angle in radians together with its cosine."""

    beta: float
    cos_beta: float


def compton_angle(absorbed_kev: float, recoil_kev: float) -> ComptonAngle:
    """Cone half-angle from the two deposited energies of a scatter-then-absorb event.

    ``absorbed_kev`` is the energy the scattered photon carries into the second
    (absorbing) interaction; ``recoil_kev`` is the energy transferred to the
    electron in the first interaction, so the incident photon carried their sum.

    Raises:
        InfeasibleEnergyError: if the implied cosine falls outside [-1, 1],
            meaning no scattering angle can produce this energy split.
    """
    if absorbed_kev <= 0.0 or recoil_kev <= 0.0:
        raise ValueError(f"energies must be > 0 keV, got {(absorbed_kev, recoil_kev)}")
    cos_beta = 1.0 + ELECTRON_REST_KEV * (1.0 / (absorbed_kev + recoil_kev) - 1.0 / absorbed_kev)
    if cos_beta < -1.0 or cos_beta > 1.0:
        raise InfeasibleEnergyError(
            f"energy split ({absorbed_kev} keV absorbed, {recoil_kev} keV recoil) "
            f"implies cos(angle) = {cos_beta:.6g}, outside [-1, 1]"
        )
    return ComptonAngle(math.acos(cos_beta), cos_beta)


@dataclass(frozen=True)
class DetectorGeometry:
    """Sensitive volume of the detector: a rectangular box, z normal to the large face.

    ``kappa`` converts a chord length through the box into an interaction
    probability via 1 - exp(-kappa * chord).
    """

    width: float = 0.014
    depth: float = 0.014
    thickness: float = 0.002
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        if self.width <= 0.0 or self.depth <= 0.0 or self.thickness <= 0.0:
            raise ValueError(
                f"detector dimensions must be > 0, got {(self.width, self.depth, self.thickness)}"
            )
        if self.kappa <= 0.0:
            raise ValueError(f"kappa must be > 0, got {self.kappa!r}")

    @property
    def face_area(self) -> float:
        """Area of the large (width x depth) face, the reference silhouette."""
        return self.width * self.depth

    def projected_area(self, direction: np.ndarray) -> float:
        """Silhouette area of the box as seen along a unit direction."""
        ux, uy, uz = (abs(float(c)) for c in direction)
        return self.depth * self.thickness * ux + self.width * self.thickness * uy + self.face_area * uz


@dataclass(frozen=True)
class AttenuationModel:
    """Exponential attenuation in air with linear coefficient mu (1/m)."""

    mu: float = 0.01

    def __post_init__(self):
        if self.mu < 0.0:
            raise ValueError(f"mu must be >= 0, got {self.mu!r}")


def attenuation(model: AttenuationModel, distance: float) -> float:
    """Surviving fraction exp(-mu * d) over a path of length d meters."""
    if distance < 0.0:
        raise ValueError(f"distance must be >= 0, got {distance!r}")
    return math.exp(-model.mu * distance)


class LookupTable:
    """Detection probability per approach direction, tabulated over (phi, theta) bins.

    Values are stored as an (n_theta, n_phi) array; entry [i, k] covers
    theta in [i, i+1) * pi/n_theta and phi in [-pi + k * dphi, ...). Queries
    snap to the nearest bin center, with exact midpoints resolved toward the
    lower bin index.
    """

    def __init__(self, values):
        v = np.asarray(values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"table must be a 2D (n_theta, n_phi) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("table entries must be finite probabilities in [0, 1]")
        v = v.copy()
        v.flags.writeable = False
        self.values = v

    @property
    def n_theta(self) -> int:
        return self.values.shape[0]

    @property
    def n_phi(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def constant(value: float, n_phi: int = DEFAULT_N_PHI, n_theta: int = DEFAULT_N_THETA) -> "LookupTable":
        return LookupTable(np.full((n_theta, n_phi), float(value)))

    def phi_centers(self) -> np.ndarray:
        d = 2.0 * math.pi / self.n_phi
        return -math.pi + (np.arange(self.n_phi) + 0.5) * d

    def theta_centers(self) -> np.ndarray:
        d = math.pi / self.n_theta
        return (np.arange(self.n_theta) + 0.5) * d

    def bin_indices(self, phi, theta) -> tuple[np.ndarray, np.ndarray]:
        """Nearest-bin indices for arrays of angles; phi wraps, theta clamps."""
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        x = np.mod(phi + math.pi, 2.0 * math.pi)
        ip = _nearest_bins(x, 2.0 * math.pi / self.n_phi, self.n_phi)
        it = _nearest_bins(np.clip(theta, 0.0, math.pi), math.pi / self.n_theta, self.n_theta)
        return ip, it


def _nearest_bins(x: np.ndarray, delta: float, n: int) -> np.ndarray:
    """Bin index of the nearest center for coordinates in [0, n * delta].

    A point exactly on an interior bin boundary is equidistant between two
    centers; the lower index wins.
    """
    k = np.floor(x / delta).astype(np.int64)
    np.clip(k, 0, n - 1, out=k)
    tie = (k >= 1) & (x == k * delta)
    k[tie] -= 1
    return k


def lookup(table: LookupTable, phi: float, theta: float) -> float:
    """Stored probability of the bin nearest to (phi, theta)."""
    ip, it = table.bin_indices(phi, theta)
    return float(table.values[int(it[0]), int(ip[0])])


def lookup_many(table: LookupTable, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Vectorized nearest-bin query."""
    ip, it = table.bin_indices(phi, theta)
    return table.values[it, ip]


def _chord_lengths(geometry: DetectorGeometry, direction: np.ndarray, origins: np.ndarray) -> np.ndarray:
    """Chords of parallel rays (origin + t * direction) through the detector box.

    Origins are (N, 3); rays that miss the box get chord 0.
    """
    half = 0.5 * np.array([geometry.width, geometry.depth, geometry.thickness])
    tmin = np.full(origins.shape[0], -np.inf)
    tmax = np.full(origins.shape[0], np.inf)
    for ax in range(3):
        d = direction[ax]
        o = origins[:, ax]
        if abs(d) < 1e-300:
            outside = (o < -half[ax]) | (o > half[ax])
            tmin = np.where(outside, np.inf, tmin)
            continue
        t1 = (-half[ax] - o) / d
        t2 = (half[ax] - o) / d
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        tmin = np.maximum(tmin, lo)
        tmax = np.minimum(tmax, hi)
    return np.maximum(tmax - tmin, 0.0)


def build_chord_lookup(
    geometry: DetectorGeometry,
    n_phi: int = DEFAULT_N_PHI,
    n_theta: int = DEFAULT_N_THETA,
    samples_per_bin: int = 2000,
    seed: int = 0,
) -> LookupTable:
    """Tabulate detection probability per direction with a chord-length model.

    For each (phi, theta) bin, parallel rays from the bin-center direction are
    sampled uniformly over the box silhouette (rejection sampling against the
    silhouette's bounding rectangle). The bin value is the mean interaction
    probability 1 - exp(-kappa * chord), scaled by the silhouette area relative
    to the face-on reference so that oblique approach directions keep their
    geometric weight. Results are reproducible bit for bit for a fixed seed;
    each bin draws from its own (seed, bin) substream.
    """
    if n_phi < 1 or n_theta < 1:
        raise ConfigurationError(f"bin counts must be >= 1, got ({n_phi}, {n_theta})")
    if samples_per_bin < 1:
        raise ConfigurationError(f"samples_per_bin must be >= 1, got {samples_per_bin!r}")

    dphi = 2.0 * math.pi / n_phi
    dtheta = math.pi / n_theta
    corners = np.array(
        [
            [sx * 0.5 * geometry.width, sy * 0.5 * geometry.depth, sz * 0.5 * geometry.thickness]
            for sx in (-1, 1)
            for sy in (-1, 1)
            for sz in (-1, 1)
        ]
    )
    values = np.empty((n_theta, n_phi))
    for it in range(n_theta):
        theta = (it + 0.5) * dtheta
        for ip in range(n_phi):
            phi = -math.pi + (ip + 0.5) * dphi
            u = np.array(
                [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
            )
            e1, e2 = perpendicular_frame(u)
            p1 = corners @ e1
            p2 = corners @ e2
            lo1, hi1 = p1.min(), p1.max()
            lo2, hi2 = p2.min(), p2.max()
            rng = np.random.default_rng([seed, it, ip])
            chords = np.empty(0)
            # Rejection loop: keep rays that actually cross the box until the
            # bin has its full sample count.
            while chords.size < samples_per_bin:
                m = max(samples_per_bin, 2 * (samples_per_bin - chords.size))
                a = rng.uniform(lo1, hi1, m)
                b = rng.uniform(lo2, hi2, m)
                origins = a[:, None] * e1 + b[:, None] * e2
                c = _chord_lengths(geometry, u, origins)
                chords = np.concatenate([chords, c[c > 0.0]])
            chords = chords[:samples_per_bin]
            hit_prob = float(np.mean(-np.expm1(-geometry.kappa * chords)))
            values[it, ip] = hit_prob * geometry.projected_area(u) / geometry.face_area
    return LookupTable(np.minimum(values, 1.0))


def detection_kernel(
    table: LookupTable,
    model: AttenuationModel,
    distances: np.ndarray,
    phi: np.ndarray,
    theta: np.ndarray,
) -> np.ndarray:
    """Per-direction detection weight: exp(-mu d) * L(phi, theta) / d^2.

    This is the single code path for detection probability; the estimator's
    sensitivity accumulation and the simulator's event-rate computation both
    call it. Units: probability per unit source intensity per second is
    obtained by multiplying with activity / (4 pi) and a time step.
    """
    d = np.asarray(distances, dtype=float)
    return np.exp(-model.mu * d) * lookup_many(table, phi, theta) / (d * d)


def detection_weight(
    table: LookupTable,
    model: AttenuationModel,
    distance: float,
    phi: float,
    theta: float,
) -> float:
    """Scalar convenience wrapper around :func:`detection_kernel`."""
    return float(
        detection_kernel(
            table, model, np.array([distance]), np.array([phi]), np.array([theta])
        )[0]
    )


def save_lookup(table: LookupTable, path) -> None:
    """Write a table as plain text: `nphi <n> ntheta <n>` then row-major values, theta outer."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"nphi {table.n_phi} ntheta {table.n_theta}\n")
        for row in table.values:
            f.write(" ".join(format(v, ".17g") for v in row) + "\n")


def load_lookup(path) -> LookupTable:
    """Read a table written by :func:`save_lookup` (whitespace layout is free-form)."""
    with open(path, "r", encoding="utf-8") as f:
        tokens = f.read().split()
    if len(tokens) < 4 or tokens[0] != "nphi" or tokens[2] != "ntheta":
        raise ValueError(f"{path}: expected header 'nphi <int> ntheta <int>'")
    try:
        n_phi = int(tokens[1])
        n_theta = int(tokens[3])
    except ValueError as exc:
        raise ValueError(f"{path}: bin counts must be integers") from exc
    body = tokens[4:]
    if len(body) != n_phi * n_theta:
        raise ValueError(f"{path}: expected {n_phi * n_theta} values, found {len(body)}")
    values = np.array([float(t) for t in body]).reshape(n_theta, n_phi)
    return LookupTable(values)
