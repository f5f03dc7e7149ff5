"""Synthetic world: gamma sources, agent kinematics, cone synthesis, log files.

Events are drawn per (source, agent) pair from a Poisson law whose mean uses
the exact detection kernel the estimator assumes, so simulated data matches
the forward model by construction. All randomness flows through one generator
in a fixed iteration order, which makes whole runs reproducible bit for bit
from the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cone_mapper.core import (
    ComptonCone,
    GridMap,
    Position3,
    SensorPose,
    Viewpoint,
    perpendicular_frame,
    polar_angles,
)
from cone_mapper.physics import AttenuationModel, LookupTable, detection_weight

# Opening angles are clipped into this open interval so cone construction
# never rejects a heavily perturbed draw.
_BETA_FLOOR = 1e-6

# Minimum source-sensor distance for event synthesis; closer pairs are
# geometrically degenerate and produce no measurement.
_DEGENERATE_M = 1e-6


@dataclass(frozen=True)
class SourceSpec:
    """A point gamma source with isotropic emission activity in becquerel."""

    position: Position3
    activity: float

    def __post_init__(self):
        if self.activity <= 0.0:
            raise ValueError(f"activity must be > 0 Bq, got {self.activity!r}")


@dataclass
class AgentState:
    """One simulated vehicle: pose, speed limit, flight height, current route.

    ``path`` holds the remaining world waypoints; ``path_index`` points at the
    next one. An exhausted path means the agent hovers in place.
    """

    agent_id: int
    pose: SensorPose
    max_speed: float = 8.0
    flight_height: float = 2.0
    path: list[Position3] = field(default_factory=list)
    path_index: int = 0
    speed: float | None = None

    def __post_init__(self):
        if self.max_speed <= 0.0:
            raise ValueError(f"max_speed must be > 0, got {self.max_speed!r}")
        if self.flight_height <= 0.0:
            raise ValueError(f"flight_height must be > 0, got {self.flight_height!r}")
        if self.speed is None:
            self.speed = self.max_speed
        if not (0.0 < self.speed <= self.max_speed):
            raise ValueError(f"speed must lie in (0, max_speed], got {self.speed!r}")

    def set_route(self, waypoints: list[Position3]) -> None:
        self.path = list(waypoints)
        self.path_index = 0


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement imperfections: angle noise, ambiguous second cones, background.

    ``angle_noise`` is the standard deviation (radians) added to the reported
    opening angle; ``p_ambiguity`` is the chance a real event also emits a
    spurious cone with a random axis; ``background_rate`` is in cones per
    second per agent; opening angles are drawn from [beta_min, beta_max].
    """

    angle_noise: float = 0.17
    p_ambiguity: float = 0.13
    background_rate: float = 0.25
    beta_min: float = 0.17
    beta_max: float = 1.40

    def __post_init__(self):
        if not (0.0 <= self.p_ambiguity <= 1.0):
            raise ValueError(f"p_ambiguity must lie in [0, 1], got {self.p_ambiguity!r}")
        if self.angle_noise < 0.0 or self.background_rate < 0.0:
            raise ValueError("noise magnitudes and rates must be >= 0")
        if not (0.0 < self.beta_min < self.beta_max < math.pi):
            raise ValueError(
                f"need 0 < beta_min < beta_max < pi, got [{self.beta_min!r}, {self.beta_max!r}]"
            )


@dataclass
class WorldState:
    """Everything the simulator advances: grid, sources, agents, clock, rng."""

    grid: GridMap
    sources: list[SourceSpec]
    agents: list[AgentState]
    table: LookupTable
    attenuation: AttenuationModel
    noise: NoiseSpec
    rng: np.random.Generator
    clock: float = 0.0

    def __post_init__(self):
        self.agents = sorted(self.agents, key=lambda a: a.agent_id)
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"agent ids must be unique, got {ids}")


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random direction on the unit sphere."""
    while True:
        v = rng.normal(size=3)
        n = float(np.linalg.norm(v))
        if n > 1e-12:
            return v / n


def synthesize_cone(
    source_position: Position3,
    pose: SensorPose,
    noise: NoiseSpec,
    rng: np.random.Generator,
    timestamp: float = 0.0,
    agent_id: int = 0,
) -> list[ComptonCone]:
    """Cones for one detected event from a known source.

    The axis is built by rotating the apex-to-source direction away by the
    drawn opening angle, so the true direction lies exactly on the ideal cone
    surface. The reported angle then gets Gaussian noise, and with probability
    ``p_ambiguity`` a second cone with an unrelated random axis and the same
    reported angle is appended.
    """
    u = source_position.as_array() - pose.position.as_array()
    dist = float(np.linalg.norm(u))
    if dist < _DEGENERATE_M:
        raise ValueError("source coincides with the sensor position")
    u /= dist

    beta_true = float(rng.uniform(noise.beta_min, noise.beta_max))
    psi = float(rng.uniform(0.0, 2.0 * math.pi))
    e1, e2 = perpendicular_frame(u)
    pivot = math.cos(psi) * e1 + math.sin(psi) * e2
    axis = u * math.cos(beta_true) + np.cross(pivot, u) * math.sin(beta_true)

    reported = beta_true + float(rng.normal(0.0, noise.angle_noise))
    reported = min(max(reported, _BETA_FLOOR), math.pi - _BETA_FLOOR)
    cones = [ComptonCone(pose, axis, reported, timestamp, agent_id)]
    if rng.uniform() < noise.p_ambiguity:
        cones.append(ComptonCone(pose, _random_unit(rng), reported, timestamp, agent_id))
    return cones


def background_cone(
    pose: SensorPose,
    noise: NoiseSpec,
    rng: np.random.Generator,
    timestamp: float = 0.0,
    agent_id: int = 0,
) -> ComptonCone:
    """A cone carrying no source information: random axis, random opening angle."""
    beta = float(rng.uniform(noise.beta_min, noise.beta_max))
    return ComptonCone(pose, _random_unit(rng), beta, timestamp, agent_id)


def advance_agent(agent: AgentState, dt: float) -> AgentState:
    """Move an agent along its waypoint route for dt seconds, in place.

    Motion is piecewise linear at the commanded speed; leftover budget after
    reaching a waypoint is spent on the next segment. Yaw tracks the motion
    direction; an agent with no route (or a consumed one) hovers.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    budget = agent.speed * dt
    pos = agent.pose.position.as_array()
    yaw = agent.pose.yaw
    while budget > 0.0 and agent.path_index < len(agent.path):
        target = agent.path[agent.path_index].as_array()
        seg = target - pos
        length = float(np.linalg.norm(seg))
        if length <= budget:
            if length > 0.0:
                yaw = math.atan2(seg[1], seg[0])
            pos = target
            budget -= length
            agent.path_index += 1
        else:
            yaw = math.atan2(seg[1], seg[0])
            pos = pos + seg * (budget / length)
            budget = 0.0
    agent.pose = SensorPose(Position3.from_array(pos), yaw=yaw, pitch=0.0, roll=0.0)
    return agent


def step(world: WorldState, dt: float) -> tuple[WorldState, list[ComptonCone], list[Viewpoint]]:
    """Advance the world by dt: move agents, sample events, emit cones and viewpoints.

    Returns the (mutated) world plus the cones and viewpoints stamped at the
    new clock time. Iteration order is fixed (agents by id, sources in listed
    order), so a given rng stream always produces the same outputs.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    t_new = world.clock + dt
    cones: list[ComptonCone] = []
    views: list[Viewpoint] = []
    for agent in world.agents:
        advance_agent(agent, dt)
        views.append(Viewpoint(agent.pose, t_new, agent.agent_id))
    for agent in world.agents:
        for src in world.sources:
            dist = agent.pose.position.distance_to(src.position)
            if dist < _DEGENERATE_M:
                continue
            phi, theta = polar_angles(agent.pose, src.position)
            weight = detection_weight(world.table, world.attenuation, dist, phi, theta)
            mean = dt * src.activity / (4.0 * math.pi) * weight
            for _ in range(int(world.rng.poisson(mean))):
                cones.extend(
                    synthesize_cone(src.position, agent.pose, world.noise, world.rng, t_new, agent.agent_id)
                )
        if world.noise.background_rate > 0.0:
            for _ in range(int(world.rng.poisson(world.noise.background_rate * dt))):
                cones.append(background_cone(agent.pose, world.noise, world.rng, t_new, agent.agent_id))
    world.clock = t_new
    return world, cones, views


def expected_event_rate(
    source: SourceSpec,
    pose: SensorPose,
    table: LookupTable,
    attenuation: AttenuationModel,
) -> float:
    """Mean usable-event rate (1/s) for one source seen from one pose."""
    dist = pose.position.distance_to(source.position)
    if dist < _DEGENERATE_M:
        return 0.0
    phi, theta = polar_angles(pose, source.position)
    return source.activity / (4.0 * math.pi) * detection_weight(table, attenuation, dist, phi, theta)


# ---------------------------------------------------------------------------
# Log files. Floats are written with 17 significant digits so that parsing a
# log reproduces the original float64 values exactly; replay depends on that.

CONE_HEADER = "t,agent,apex_x,apex_y,apex_z,roll,pitch,yaw,axis_x,axis_y,axis_z,beta"
VIEWPOINT_HEADER = "t,agent,x,y,z,roll,pitch,yaw"


def format_float(x: float) -> str:
    return format(float(x), ".16e")


def write_cone_log(cones: list[ComptonCone], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# schema: cone-log/1\n")
        f.write(CONE_HEADER + "\n")
        for c in cones:
            p = c.apex_pose
            fields = [format_float(c.timestamp), str(c.agent_id)]
            fields += [format_float(v) for v in (p.position.x, p.position.y, p.position.z)]
            fields += [format_float(v) for v in (p.roll, p.pitch, p.yaw)]
            fields += [format_float(v) for v in c.axis]
            fields.append(format_float(c.opening_angle))
            f.write(",".join(fields) + "\n")


def write_viewpoint_log(viewpoints: list[Viewpoint], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# schema: viewpoint-log/1\n")
        f.write(VIEWPOINT_HEADER + "\n")
        for v in viewpoints:
            p = v.pose
            fields = [format_float(v.timestamp), str(v.agent_id)]
            fields += [format_float(x) for x in (p.position.x, p.position.y, p.position.z)]
            fields += [format_float(x) for x in (p.roll, p.pitch, p.yaw)]
            f.write(",".join(fields) + "\n")


def _data_lines(path, expected_header: str):
    """Yield (line_number, fields) for CSV body rows, checking the column header."""
    header_seen = False
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                if line != expected_header:
                    raise ValueError(f"{path}:{lineno}: expected header '{expected_header}'")
                header_seen = True
                continue
            yield lineno, line.split(",")


def read_cone_log(path) -> list[ComptonCone]:
    cones = []
    for lineno, fields in _data_lines(path, CONE_HEADER):
        if len(fields) != 12:
            raise ValueError(f"{path}:{lineno}: expected 12 columns, got {len(fields)}")
        try:
            t = float(fields[0])
            agent = int(fields[1])
            x, y, z, roll, pitch, yaw = (float(v) for v in fields[2:8])
            axis = np.array([float(v) for v in fields[8:11]])
            beta = float(fields[11])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed cone row: {exc}") from exc
        pose = SensorPose(Position3(x, y, z), yaw=yaw, pitch=pitch, roll=roll)
        cones.append(ComptonCone(pose, axis, beta, t, agent))
    return cones


def read_viewpoint_log(path) -> list[Viewpoint]:
    views = []
    for lineno, fields in _data_lines(path, VIEWPOINT_HEADER):
        if len(fields) != 8:
            raise ValueError(f"{path}:{lineno}: expected 8 columns, got {len(fields)}")
        try:
            t = float(fields[0])
            agent = int(fields[1])
            x, y, z, roll, pitch, yaw = (float(v) for v in fields[2:])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed viewpoint row: {exc}") from exc
        views.append(Viewpoint(SensorPose(Position3(x, y, z), yaw=yaw, pitch=pitch, roll=roll), t, agent))
    return views
