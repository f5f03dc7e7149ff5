"""Active search: waypoint generation, task assignment, sequencing, path planning.

The search alternates two drives. Exploration sends agents where accumulated
sensitivity is still below a floor (nothing could have been detected there
yet); exploitation sends them to confirm local maxima of the current intensity
estimate that are not yet observed well enough to be settled. Waypoints are
clustered, split among agents, ordered like a small open traveling-salesman
tour, and turned into conflict-free grid paths by prioritized time-expanded
search. A lawn-mower sweep is included as the comparison baseline.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from cone_mapper.core import GridMap, Position3
from cone_mapper.recon import IntensityField, SensitivityField, local_maxima

SEQUENCE_GUARD = 50
_EXACT_SEQUENCE_LIMIT = 10


@dataclass(frozen=True)
class StrategyConfig:
    """Thresholds and cadence of the active search."""

    s_min: float
    s_max: float
    k_explore: int = 12
    recent_radius: float = 3.0
    recent_window: float = 30.0
    replan_period: float = 5.0

    def __post_init__(self):
        if not (0.0 < self.s_min <= self.s_max):
            raise ValueError(f"need 0 < s_min <= s_max, got ({self.s_min!r}, {self.s_max!r})")
        if self.k_explore < 1:
            raise ValueError(f"k_explore must be >= 1, got {self.k_explore!r}")
        if self.recent_radius < 0.0 or self.recent_window < 0.0:
            raise ValueError("recent-visit radius and window must be >= 0")
        if self.replan_period <= 0.0:
            raise ValueError(f"replan_period must be > 0, got {self.replan_period!r}")


@dataclass(frozen=True)
class WaypointSet:
    """Candidate targets, split by purpose. A cell appears at most once overall.

    Cells qualifying for both purposes are tagged exploitation (the stronger
    claim). An empty set signals that the search has nothing left to do.
    """

    exploitation: tuple[Position3, ...]
    exploration: tuple[Position3, ...]

    @property
    def is_empty(self) -> bool:
        return not self.exploitation and not self.exploration

    def all_points(self) -> list[Position3]:
        return list(self.exploitation) + list(self.exploration)


def _kmeans_pp_init(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ starting centers."""
    n = pts.shape[0]
    centers = [pts[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(((pts[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(axis=2), axis=1)
        total = float(d2.sum())
        if total <= 0.0:
            centers.append(pts[int(rng.integers(n))])
        else:
            centers.append(pts[int(rng.choice(n, p=d2 / total))])
    return np.asarray(centers, dtype=float)


def cluster_exploration(points, k: int, seed: int = 0) -> np.ndarray:
    """Reduce a point cloud to at most k representatives, each an actual member.

    Lloyd's iterations from a seeded k-means++ start run to an assignment
    fixpoint (or 100 rounds); every final centroid is snapped to the nearest
    member of its cluster so the output stays on reachable cells. Asking for
    k >= the number of points returns the points unchanged.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a non-empty (N, D) array")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k!r}")
    n = pts.shape[0]
    if k >= n:
        return pts.copy()
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(pts, k, rng)
    assign = np.full(n, -1)
    for _ in range(100):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = pts[assign == c]
            if members.shape[0] > 0:
                centers[c] = members.mean(axis=0)
    reps = []
    for c in range(k):
        members = np.nonzero(assign == c)[0]
        if members.size == 0:
            continue
        d2 = ((pts[members] - centers[c]) ** 2).sum(axis=1)
        reps.append(pts[members[int(d2.argmin())]])
    return np.asarray(reps)


def generate_waypoints(
    lam: IntensityField,
    sens: SensitivityField,
    grid: GridMap,
    config: StrategyConfig,
    recent_visits=(),
    now: float = 0.0,
    seed: int = 0,
) -> WaypointSet:
    """Targets for the next planning cycle, from the current estimate and coverage.

    Exploitation targets are strict 8-neighborhood local maxima of the
    intensity estimate whose cells are not yet observed beyond ``s_max``.
    Exploration targets represent the under-observed region (sensitivity below
    ``s_min``), thinned to ``k_explore`` cluster representatives. Targets
    lying within ``recent_radius`` (ground distance) of any position visited
    in the last ``recent_window`` seconds are dropped; ``recent_visits`` is an
    iterable of (timestamp, position) pairs.
    """
    peaks = local_maxima(lam, grid, n=grid.n_cells, sens=sens, s_max=config.s_max)
    exploit_cells = [grid.nearest_cell(p) for p, _ in peaks.peaks]

    under = np.nonzero(sens.values < config.s_min)[0]
    explore_cells: list[int] = []
    if under.size > 0:
        xy = grid.centers()[under][:, :2]
        reps = cluster_exploration(xy, config.k_explore, seed=seed)
        explore_cells = [
            grid.nearest_cell(Position3(float(x), float(y), 0.0)) for x, y in reps
        ]

    exploit_set = set(exploit_cells)
    explore_cells = [c for c in explore_cells if c not in exploit_set]

    def fresh(cell: int) -> bool:
        cx, cy = grid.centers()[cell][:2]
        for t, pos in recent_visits:
            if now - t <= config.recent_window and t <= now:
                if math.hypot(cx - pos.x, cy - pos.y) <= config.recent_radius:
                    return False
        return True

    exploit_final = [c for c in _dedupe(exploit_cells) if fresh(c)]
    explore_final = [c for c in _dedupe(explore_cells) if fresh(c)]
    return WaypointSet(
        exploitation=tuple(grid.cell_center(c) for c in exploit_final),
        exploration=tuple(grid.cell_center(c) for c in explore_final),
    )


def _dedupe(cells: list[int]) -> list[int]:
    seen: set[int] = set()
    out = []
    for c in cells:
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


def assign_to_agents(
    waypoints: list[Position3], agent_positions: list[Position3]
) -> list[list[Position3]]:
    """Partition waypoints among agents by clustering seeded at agent positions.

    The number of clusters equals the number of agents and each cluster stays
    bound to the agent whose position seeded it, so agents keep the work that
    grew around them. Distances use ground (x, y) coordinates. Agents whose
    cluster goes empty simply receive no waypoints.
    """
    if not agent_positions:
        raise ValueError("at least one agent is required")
    groups: list[list[Position3]] = [[] for _ in agent_positions]
    if not waypoints:
        return groups
    pts = np.array([[w.x, w.y] for w in waypoints])
    centers = np.array([[a.x, a.y] for a in agent_positions], dtype=float)
    assign = np.full(pts.shape[0], -1)
    for _ in range(100):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(centers.shape[0]):
            members = pts[assign == c]
            if members.shape[0] > 0:
                centers[c] = members.mean(axis=0)
    for i, w in enumerate(waypoints):
        groups[int(assign[i])].append(w)
    return groups


def _path_cost(order: list[Position3], start: Position3) -> float:
    total = 0.0
    prev = start.as_array()
    for w in order:
        cur = w.as_array()
        total += float(np.linalg.norm(cur - prev))
        prev = cur
    return total


def sequence(waypoints: list[Position3], start: Position3) -> list[Position3]:
    """Order waypoints into a short open path that begins at the start position.

    Instances of up to ten waypoints are solved exactly by Held-Karp dynamic
    programming over visited-subset states. Larger instances fall back to
    nearest-neighbor construction followed by local search until no move
    shortens the path: 2-opt segment reversals plus relocation of segments of
    up to three waypoints, either orientation (the end stays free). Costs are
    Euclidean. Plain 2-opt leaves open-path local optima well above optimal
    on small instances, which is why the small-instance route is exact.
    Inputs beyond the 50-waypoint guard are rejected; callers thin first.
    """
    if len(waypoints) > SEQUENCE_GUARD:
        raise ValueError(f"sequence accepts at most {SEQUENCE_GUARD} waypoints, got {len(waypoints)}")
    if not waypoints:
        return []
    pts = np.array([start.as_array()] + [w.as_array() for w in waypoints])
    dmat = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    m = len(waypoints)
    if m <= _EXACT_SEQUENCE_LIMIT:
        order = _held_karp_open_path(dmat, m)
    else:
        order = _local_search_open_path(dmat, m)
    return [waypoints[t - 1] for t in order]


def _held_karp_open_path(dmat: np.ndarray, m: int) -> list[int]:
    """Optimal visiting order (1-based into dmat) for a free-end open path."""
    full = 1 << m
    dp = np.full((full, m), np.inf)
    parent = np.full((full, m), -1, dtype=int)
    for j in range(m):
        dp[1 << j, j] = dmat[0, j + 1]
    for mask in range(1, full):
        members = [j for j in range(m) if mask >> j & 1]
        if len(members) < 2:
            continue
        for j in members:
            prev_mask = mask ^ (1 << j)
            best_cost = np.inf
            best_prev = -1
            for i in members:
                if i == j:
                    continue
                c = dp[prev_mask, i] + dmat[i + 1, j + 1]
                if c < best_cost:
                    best_cost = c
                    best_prev = i
            dp[mask, j] = best_cost
            parent[mask, j] = best_prev
    mask = full - 1
    j = int(np.argmin(dp[mask]))
    order_rev = []
    while j >= 0:
        order_rev.append(j + 1)
        j, mask = int(parent[mask, j]), mask ^ (1 << j)
    return order_rev[::-1]


def _local_search_open_path(dmat: np.ndarray, m: int) -> list[int]:
    """Near-optimal visiting order (1-based into dmat) for larger batches."""

    def cost(seq: list[int]) -> float:
        q = np.asarray(seq)
        return float(dmat[0, q[0]] + dmat[q[:-1], q[1:]].sum())

    remaining = list(range(1, m + 1))
    order: list[int] = []
    cur = 0
    while remaining:
        nxt = int(np.argmin(dmat[cur, remaining]))
        cur = remaining.pop(nxt)
        order.append(cur)

    best = cost(order)
    improved = True
    while improved:
        improved = False
        for i in range(m - 1):
            for j in range(i + 1, m):
                cand = order[:i] + order[i : j + 1][::-1] + order[j + 1 :]
                c = cost(cand)
                if c < best - 1e-12:
                    order, best, improved = cand, c, True
        for seg_len in (1, 2, 3):
            for i in range(m - seg_len + 1):
                seg = order[i : i + seg_len]
                rest = order[:i] + order[i + seg_len :]
                for k in range(len(rest) + 1):
                    for piece in (seg, seg[::-1]):
                        cand = rest[:k] + piece + rest[k:]
                        if cand == order:
                            continue
                        c = cost(cand)
                        if c < best - 1e-12:
                            order, best, improved = cand, c, True
    return order


# ---------------------------------------------------------------------------
# Prioritized conflict-free grid planning.


@dataclass
class _Reservations:
    """Space-time bookings left by already-planned agents."""

    vertex: dict[int, set[int]] = field(default_factory=dict)
    edge: dict[int, set[tuple[int, int]]] = field(default_factory=dict)
    parked: dict[int, int] = field(default_factory=dict)
    last_busy: dict[int, int] = field(default_factory=dict)

    def move_allowed(self, c_from: int, c_to: int, t_depart: int) -> bool:
        """Can an agent occupy c_to at t_depart + 1, coming from c_from?"""
        t_arrive = t_depart + 1
        if c_to in self.vertex.get(t_arrive, ()):
            return False
        park = self.parked.get(c_to)
        if park is not None and park <= t_arrive:
            return False
        if (c_to, c_from) in self.edge.get(t_depart, ()) and c_to != c_from:
            return False
        return True

    def forever_free(self, cell: int, t: int) -> bool:
        """No booking on the cell at any time >= t, so an agent may rest there."""
        if cell in self.parked:
            return False
        return self.last_busy.get(cell, -1) < t

    def commit(self, path: list[int]) -> None:
        """Book an agent's full path; the final cell is occupied forever after."""
        for t, cell in enumerate(path):
            self.vertex.setdefault(t, set()).add(cell)
            if self.last_busy.get(cell, -1) < t:
                self.last_busy[cell] = t
            if t + 1 < len(path):
                self.edge.setdefault(t, set()).add((cell, path[t + 1]))
        self.parked[path[-1]] = len(path) - 1


@dataclass
class PlanState:
    """Result of one planning round: routes, their cell paths, and skipped goals.

    ``cell_paths[i][t]`` is agent i's cell at time index t; agents rest at
    their final cell afterwards. ``skipped`` lists (agent index, cell) goals
    that could not be reached this round.
    """

    cell_sequences: list[list[int]]
    cell_paths: list[list[int]]
    skipped: list[tuple[int, int]]

    def world_paths(self, grid: GridMap, lift: float = 0.0) -> list[list[Position3]]:
        """Cell paths as world positions, optionally lifted above the terrain."""
        out = []
        for path in self.cell_paths:
            pts = []
            for c in path:
                p = grid.cell_center(c)
                pts.append(Position3(p.x, p.y, p.z + lift))
            out.append(pts)
        return out


_MOVES = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _chebyshev(grid: GridMap, a: int, b: int) -> int:
    ax, ay = grid.cell_ixy(a)
    bx, by = grid.cell_ixy(b)
    return max(abs(ax - bx), abs(ay - by))


def _greedy_leg(
    grid: GridMap, res: _Reservations, start: int, t0: int, goal: int, final: bool
) -> list[int] | None:
    """Straight-at-the-goal Chebyshev walk; None as soon as it would conflict."""
    path = [start]
    c, t = start, t0
    while c != goal:
        cx, cy = grid.cell_ixy(c)
        gx, gy = grid.cell_ixy(goal)
        nx = cx + (gx > cx) - (gx < cx)
        ny = cy + (gy > cy) - (gy < cy)
        nxt = grid.cell_index(nx, ny)
        if not res.move_allowed(c, nxt, t):
            return None
        path.append(nxt)
        c, t = nxt, t + 1
    if final and not res.forever_free(goal, t):
        return None
    return path


def _astar_leg(
    grid: GridMap,
    res: _Reservations,
    start: int,
    t0: int,
    goal: int,
    final: bool,
    horizon: int,
    max_pops: int = 200_000,
) -> list[int] | None:
    """Time-expanded A* over (cell, time): 8-connected moves plus waiting.

    Each move costs one time step. The goal counts as reached only when the
    booking rules allow standing there (forever, for a final leg). Returns the
    cell path from t0, or None when capped out.
    """
    start_state = (start, t0)
    open_heap = [(_chebyshev(grid, start, goal), t0, start_state)]
    came: dict[tuple[int, int], tuple[int, int] | None] = {start_state: None}
    best_g: dict[tuple[int, int], int] = {start_state: 0}
    pops = 0
    while open_heap and pops < max_pops:
        _, _, state = heapq.heappop(open_heap)
        cell, t = state
        pops += 1
        if cell == goal and (not final or res.forever_free(goal, t)):
            path = []
            cur: tuple[int, int] | None = state
            while cur is not None:
                path.append(cur[0])
                cur = came[cur]
            return path[::-1]
        if t - t0 >= horizon:
            continue
        g_here = best_g[state]
        cx, cy = grid.cell_ixy(cell)
        steps = [(0, 0)] + _MOVES
        for dx, dy in steps:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < grid.nx and 0 <= ny < grid.ny):
                continue
            nxt = grid.cell_index(nx, ny)
            if not res.move_allowed(cell, nxt, t):
                continue
            nstate = (nxt, t + 1)
            g = g_here + 1
            if g < best_g.get(nstate, 1 << 60):
                best_g[nstate] = g
                came[nstate] = state
                heapq.heappush(open_heap, (g + _chebyshev(grid, nxt, goal), t + 1, nstate))
    return None


def _relocation_leg(
    grid: GridMap, res: _Reservations, start: int, t0: int, horizon: int
) -> list[int] | None:
    """Shortest walk to any cell where the agent may rest forever (Dijkstra)."""
    start_state = (start, t0)
    open_heap = [(0, start_state)]
    came: dict[tuple[int, int], tuple[int, int] | None] = {start_state: None}
    best_g: dict[tuple[int, int], int] = {start_state: 0}
    while open_heap:
        g, state = heapq.heappop(open_heap)
        cell, t = state
        if res.forever_free(cell, t):
            path = []
            cur: tuple[int, int] | None = state
            while cur is not None:
                path.append(cur[0])
                cur = came[cur]
            return path[::-1]
        if t - t0 >= horizon:
            continue
        cx, cy = grid.cell_ixy(cell)
        for dx, dy in [(0, 0)] + _MOVES:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < grid.nx and 0 <= ny < grid.ny):
                continue
            nxt = grid.cell_index(nx, ny)
            if not res.move_allowed(cell, nxt, t):
                continue
            nstate = (nxt, t + 1)
            if g + 1 < best_g.get(nstate, 1 << 60):
                best_g[nstate] = g + 1
                came[nstate] = state
                heapq.heappush(open_heap, (g + 1, nstate))
    return None


def plan_paths(
    sequences: list[list[Position3]],
    grid: GridMap,
    agent_positions: list[Position3],
) -> PlanState:
    """Conflict-free grid paths visiting each agent's ordered waypoints.

    Agents are planned one after another in list order; each later agent
    treats every earlier path (including its final resting cell, forever) as
    booked. A leg tries the straight Chebyshev walk first and falls back to
    time-expanded A* when that walk would collide. Goals that stay unreachable
    within the search horizon are skipped and reported, and an agent whose
    resting cell is permanently booked relocates to the nearest free cell.
    """
    if len(sequences) != len(agent_positions):
        raise ValueError("one waypoint sequence per agent position is required")
    res = _Reservations()
    horizon = 8 * max(grid.nx, grid.ny) + 64
    cell_paths: list[list[int]] = []
    cell_sequences: list[list[int]] = []
    skipped: list[tuple[int, int]] = []

    for idx, (seq, pos) in enumerate(zip(sequences, agent_positions)):
        goals = [grid.nearest_cell(w) for w in seq]
        cell_sequences.append(goals)
        path = [grid.nearest_cell(pos)]
        for gi, goal in enumerate(goals):
            final = gi == len(goals) - 1
            t0 = len(path) - 1
            leg = _greedy_leg(grid, res, path[-1], t0, goal, final)
            if leg is None:
                leg = _astar_leg(grid, res, path[-1], t0, goal, final, horizon)
            if leg is None:
                skipped.append((idx, goal))
                continue
            path.extend(leg[1:])
        if not res.forever_free(path[-1], len(path) - 1):
            leg = _relocation_leg(grid, res, path[-1], len(path) - 1, horizon)
            if leg is not None:
                path.extend(leg[1:])
        res.commit(path)
        cell_paths.append(path)
    return PlanState(cell_sequences, cell_paths, skipped)


def zigzag(grid: GridMap, lateral_step: float, n_agents: int) -> list[list[Position3]]:
    """Lawn-mower coverage: equal x-strips, one agent each, serpentine sweeps.

    Sweep lines run along y, spaced by the lateral step and centered inside
    each strip; a step wider than the strip leaves a single center line. Path
    points are emitted along each line no farther apart than the step, so
    every ground point of the strip is within step/sqrt(2) of some point.
    """
    if lateral_step <= 0.0:
        raise ValueError(f"lateral_step must be > 0, got {lateral_step!r}")
    if n_agents < 1:
        raise ValueError(f"n_agents must be >= 1, got {n_agents!r}")
    width = grid.nx * grid.resolution
    height = grid.ny * grid.resolution
    strip = width / n_agents
    n_y = max(1, math.ceil(height / lateral_step))
    ys = [grid.origin.y + height * k / n_y for k in range(n_y + 1)]
    paths: list[list[Position3]] = []
    for a in range(n_agents):
        x0 = grid.origin.x + a * strip
        n_lines = int(math.floor(strip / lateral_step)) + 1
        margin = (strip - (n_lines - 1) * lateral_step) / 2.0
        pts: list[Position3] = []
        for k in range(n_lines):
            x = x0 + margin + k * lateral_step
            column = ys if k % 2 == 0 else ys[::-1]
            for y in column:
                pts.append(Position3(x, y, grid.height_at(x, y)))
        paths.append(pts)
    return paths
