"""Waypoint selection, assignment, sequencing, grid planning, and the zigzag baseline."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cone_mapper.core import GridMap, Position3
from cone_mapper.recon import IntensityField, SensitivityField, uniform_intensity
from cone_mapper.strategy import (
    SEQUENCE_GUARD,
    StrategyConfig,
    WaypointSet,
    _path_cost,
    assign_to_agents,
    cluster_exploration,
    generate_waypoints,
    plan_paths,
    sequence,
    zigzag,
)


def _grid(nx=20, ny=20, r=0.5):
    return GridMap(Position3(0.0, 0.0, 0.0), r, nx, ny)


def _sens(grid, value):
    s = SensitivityField(grid, default_dt=0.5)
    s.values[:] = value
    return s


CFG = StrategyConfig(s_min=1.0, s_max=10.0, k_explore=6)


# ---------------------------------------------------------------------------
# Config and waypoint-set plumbing.


def test_strategy_config_validation():
    with pytest.raises(ValueError):
        StrategyConfig(s_min=0.0, s_max=1.0)
    with pytest.raises(ValueError):
        StrategyConfig(s_min=2.0, s_max=1.0)
    with pytest.raises(ValueError):
        StrategyConfig(s_min=1.0, s_max=2.0, k_explore=0)
    with pytest.raises(ValueError):
        StrategyConfig(s_min=1.0, s_max=2.0, recent_radius=-1.0)
    with pytest.raises(ValueError):
        StrategyConfig(s_min=1.0, s_max=2.0, replan_period=0.0)


def test_waypoint_set_all_points_order():
    a = Position3(1.0, 0.0, 0.0)
    b = Position3(2.0, 0.0, 0.0)
    ws = WaypointSet(exploitation=(a,), exploration=(b,))
    assert not ws.is_empty
    assert ws.all_points() == [a, b]
    assert WaypointSet(exploitation=(), exploration=()).is_empty


# ---------------------------------------------------------------------------
# Waypoint generation.


def test_saturated_flat_field_yields_empty_set():
    grid = _grid()
    lam = uniform_intensity(grid)
    sens = _sens(grid, 5.0)  # everywhere above s_min, flat estimate has no peaks
    ws = generate_waypoints(lam, sens, grid, CFG)
    assert ws.is_empty


def test_fresh_mission_yields_pure_exploration():
    grid = _grid()
    lam = uniform_intensity(grid)
    sens = _sens(grid, 0.0)
    ws = generate_waypoints(lam, sens, grid, CFG)
    assert ws.exploitation == ()
    assert len(ws.exploration) == CFG.k_explore
    # representatives are distinct cells spread over the map, not a single pile
    cells = {grid.nearest_cell(p) for p in ws.exploration}
    assert len(cells) == CFG.k_explore
    xs = [p.x for p in ws.exploration]
    ys = [p.y for p in ws.exploration]
    assert max(xs) - min(xs) > 0.25 * grid.nx * grid.resolution
    assert max(ys) - min(ys) > 0.25 * grid.ny * grid.resolution


def test_peak_below_ceiling_is_exploited():
    grid = _grid()
    values = np.ones(grid.n_cells)
    peak = grid.cell_index(7, 9)
    values[peak] = 4.0
    sens = _sens(grid, 5.0)
    ws = generate_waypoints(IntensityField(values), sens, grid, CFG)
    assert [grid.nearest_cell(p) for p in ws.exploitation] == [peak]
    assert ws.exploration == ()


def test_peak_above_ceiling_excluded():
    grid = _grid()
    values = np.ones(grid.n_cells)
    peak = grid.cell_index(7, 9)
    values[peak] = 4.0
    sens = _sens(grid, 5.0)
    sens.values[peak] = 2.0 * CFG.s_max
    ws = generate_waypoints(IntensityField(values), sens, grid, CFG)
    assert ws.is_empty


def test_cell_qualifying_for_both_is_tagged_exploitation():
    grid = _grid()
    values = np.ones(grid.n_cells)
    peak = grid.cell_index(4, 4)
    values[peak] = 3.0
    sens = _sens(grid, 5.0)
    sens.values[peak] = 0.0  # under-explored AND a peak
    ws = generate_waypoints(IntensityField(values), sens, grid, CFG)
    assert [grid.nearest_cell(p) for p in ws.exploitation] == [peak]
    assert peak not in {grid.nearest_cell(p) for p in ws.exploration}


def test_recent_visit_filters_targets():
    grid = _grid()
    values = np.ones(grid.n_cells)
    peak = grid.cell_index(7, 9)
    values[peak] = 4.0
    lam = IntensityField(values)
    sens = _sens(grid, 5.0)
    target = grid.cell_center(peak)
    near = Position3(target.x + 2.0, target.y, 0.0)

    fresh_hit = generate_waypoints(
        lam, sens, grid, CFG, recent_visits=[(90.0, near)], now=100.0
    )
    assert fresh_hit.is_empty

    stale = generate_waypoints(
        lam, sens, grid, CFG, recent_visits=[(60.0, near)], now=100.0
    )
    assert [grid.nearest_cell(p) for p in stale.exploitation] == [peak]

    far = Position3(target.x + 5.0, target.y, 0.0)
    unaffected = generate_waypoints(
        lam, sens, grid, CFG, recent_visits=[(90.0, far)], now=100.0
    )
    assert [grid.nearest_cell(p) for p in unaffected.exploitation] == [peak]


def test_waypoints_are_cell_centers():
    grid = _grid()
    rng = np.random.default_rng(3)
    lam = IntensityField(rng.uniform(0.1, 2.0, grid.n_cells))
    sens = _sens(grid, 0.0)
    sens.values[:] = rng.uniform(0.0, 3.0, grid.n_cells)
    ws = generate_waypoints(lam, sens, grid, CFG, seed=5)
    assert not ws.is_empty
    for p in ws.all_points():
        c = grid.cell_center(grid.nearest_cell(p))
        assert (p.x, p.y, p.z) == (c.x, c.y, c.z)


def test_waypoint_generation_is_seed_deterministic():
    grid = _grid()
    rng = np.random.default_rng(11)
    lam = IntensityField(rng.uniform(0.1, 2.0, grid.n_cells))
    sens = _sens(grid, 0.0)
    a = generate_waypoints(lam, sens, grid, CFG, seed=7)
    b = generate_waypoints(lam, sens, grid, CFG, seed=7)
    assert a == b


# ---------------------------------------------------------------------------
# Exploration clustering.


def test_cluster_passthrough_when_k_covers_points():
    pts = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]])
    out = cluster_exploration(pts, 3)
    np.testing.assert_array_equal(out, pts)
    out = cluster_exploration(pts, 10)
    np.testing.assert_array_equal(out, pts)


def test_cluster_two_blobs_one_representative_each():
    rng = np.random.default_rng(0)
    blob_a = rng.normal((0.0, 0.0), 0.2, size=(15, 2))
    blob_b = rng.normal((10.0, 10.0), 0.2, size=(15, 2))
    pts = np.vstack([blob_a, blob_b])
    reps = cluster_exploration(pts, 2, seed=1)
    assert reps.shape == (2, 2)
    dist_to_a = np.linalg.norm(reps - np.array([0.0, 0.0]), axis=1)
    dist_to_b = np.linalg.norm(reps - np.array([10.0, 10.0]), axis=1)
    assert sorted([dist_to_a.min() < 1.0, dist_to_b.min() < 1.0]) == [True, True]
    # representatives are actual members, not synthetic centroids
    for rep in reps:
        assert any(np.allclose(rep, p) for p in pts)


def test_cluster_wcss_beats_random_assignment():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0.0, 50.0, size=(100, 2))
    reps = cluster_exploration(pts, 4, seed=2)
    labels = ((pts[:, None, :] - reps[None, :, :]) ** 2).sum(axis=2).argmin(axis=1)
    random_labels = rng.integers(0, 4, size=100)

    def wcss(assign):
        total = 0.0
        for c in np.unique(assign):
            members = pts[assign == c]
            total += float(((members - members.mean(axis=0)) ** 2).sum())
        return total

    assert wcss(labels) < wcss(random_labels)


def test_cluster_small_case_near_bruteforce_optimum():
    # exhaustive two-part partition oracle on n <= 8 points
    def wcss(pts, labels):
        total = 0.0
        for c in set(labels):
            members = pts[labels == c]
            total += float(((members - members.mean(axis=0)) ** 2).sum())
        return total

    worst = 1.0
    for seed in range(12):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 9))
        pts = rng.uniform(0.0, 10.0, size=(n, 2))
        reps = cluster_exploration(pts, 2, seed=seed)
        labels = ((pts[:, None, :] - reps[None, :, :]) ** 2).sum(axis=2).argmin(axis=1)
        got = wcss(pts, labels)
        best = min(
            wcss(pts, np.asarray(lab))
            for lab in itertools.product([0, 1], repeat=n)
            if 0 < sum(lab) < n
        )
        worst = max(worst, got / best if best > 0 else 1.0)
    assert worst < 1.7


def test_cluster_validation_errors():
    with pytest.raises(ValueError):
        cluster_exploration(np.zeros((0, 2)), 2)
    with pytest.raises(ValueError):
        cluster_exploration(np.zeros((3,)), 2)
    with pytest.raises(ValueError):
        cluster_exploration(np.zeros((3, 2)), 0)


# ---------------------------------------------------------------------------
# Assignment.


def test_assign_single_agent_gets_everything():
    wps = [Position3(float(i), 0.0, 0.0) for i in range(5)]
    groups = assign_to_agents(wps, [Position3(0.0, 0.0, 0.0)])
    assert groups == [wps]


def test_assign_no_agents_raises():
    with pytest.raises(ValueError):
        assign_to_agents([Position3(0.0, 0.0, 0.0)], [])


def test_assign_empty_waypoints():
    agents = [Position3(0.0, 0.0, 0.0), Position3(9.0, 9.0, 0.0)]
    assert assign_to_agents([], agents) == [[], []]


def test_assign_splits_by_proximity_and_keeps_identity():
    left_agent = Position3(0.0, 5.0, 0.0)
    right_agent = Position3(20.0, 5.0, 0.0)
    left_wps = [Position3(1.0, y, 0.0) for y in (3.0, 5.0, 7.0)]
    right_wps = [Position3(19.0, y, 0.0) for y in (4.0, 6.0)]
    groups = assign_to_agents(left_wps + right_wps, [left_agent, right_agent])
    assert sorted(p.y for p in groups[0]) == [3.0, 5.0, 7.0]
    assert sorted(p.y for p in groups[1]) == [4.0, 6.0]


def test_assign_three_blobs_stay_local():
    rng = np.random.default_rng(8)
    centers = [(0.0, 0.0), (30.0, 0.0), (15.0, 25.0)]
    agents = [Position3(x, y, 0.0) for x, y in centers]
    wps = []
    owner = []
    for i, (cx, cy) in enumerate(centers):
        for _ in range(6):
            dx, dy = rng.normal(0.0, 1.0, 2)
            wps.append(Position3(cx + dx, cy + dy, 0.0))
            owner.append(i)
    groups = assign_to_agents(wps, agents)
    for i, group in enumerate(groups):
        assert len(group) == 6
        for p in group:
            ax, ay = centers[i]
            assert math.hypot(p.x - ax, p.y - ay) < 6.0


# ---------------------------------------------------------------------------
# Sequencing.


def test_sequence_empty_and_single():
    start = Position3(0.0, 0.0, 0.0)
    assert sequence([], start) == []
    only = Position3(3.0, 4.0, 0.0)
    assert sequence([only], start) == [only]


def test_sequence_guard_rejects_oversized_input():
    start = Position3(0.0, 0.0, 0.0)
    wps = [Position3(float(i), 0.0, 0.0) for i in range(SEQUENCE_GUARD + 1)]
    with pytest.raises(ValueError):
        sequence(wps, start)


def test_sequence_collinear_points_keep_order():
    start = Position3(0.0, 0.0, 0.0)
    wps = [Position3(x, 0.0, 0.0) for x in (1.0, 2.0, 3.0, 4.0)]
    shuffled = [wps[2], wps[0], wps[3], wps[1]]
    assert sequence(shuffled, start) == wps


def _bruteforce_cost(dmat, n):
    best = math.inf
    for perm in itertools.permutations(range(1, n + 1)):
        cost = dmat[0, perm[0]]
        for a, b in zip(perm, perm[1:]):
            cost += dmat[a, b]
        best = min(best, cost)
    return best


def test_sequence_matches_bruteforce_on_small_instances():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        wps = [Position3(*rng.uniform(0.0, 50.0, 2), 0.0) for _ in range(n)]
        start = Position3(*rng.uniform(0.0, 50.0, 2), 0.0)
        got = _path_cost(sequence(wps, start), start)
        pts = np.array([start.as_array()] + [w.as_array() for w in wps])
        dmat = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        assert got <= _bruteforce_cost(dmat, n) + 1e-9


def test_sequence_large_instance_improves_on_greedy():
    rng = np.random.default_rng(12)
    n = 16
    wps = [Position3(*rng.uniform(0.0, 50.0, 2), 0.0) for _ in range(n)]
    start = Position3(25.0, 25.0, 0.0)
    ordered = sequence(wps, start)
    assert sorted(p.x for p in ordered) == sorted(p.x for p in wps)

    remaining = list(wps)
    cur = start
    greedy_cost = 0.0
    while remaining:
        dists = [cur.distance_to(w) for w in remaining]
        nxt = remaining.pop(int(np.argmin(dists)))
        greedy_cost += cur.distance_to(nxt)
        cur = nxt
    assert _path_cost(ordered, start) <= greedy_cost + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_sequence_output_is_permutation(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 15))
    wps = [Position3(*rng.uniform(0.0, 20.0, 2), 0.0) for _ in range(n)]
    out = sequence(wps, Position3(0.0, 0.0, 0.0))
    assert sorted(id(p) for p in out) == sorted(id(p) for p in wps)


# ---------------------------------------------------------------------------
# Conflict-free grid planning.


def _scan_conflicts(cell_paths):
    """Assert no two agents share a cell at any step and no pair swaps cells."""
    horizon = max(len(p) for p in cell_paths)
    padded = [list(p) + [p[-1]] * (horizon - len(p)) for p in cell_paths]
    for t in range(horizon):
        seen = {}
        for agent, path in enumerate(padded):
            cell = path[t]
            assert cell not in seen, f"vertex conflict at t={t}"
            seen[cell] = agent
    for t in range(horizon - 1):
        for a, b in itertools.combinations(range(len(padded)), 2):
            swap = (
                padded[a][t] == padded[b][t + 1]
                and padded[a][t + 1] == padded[b][t]
                and padded[a][t] != padded[a][t + 1]
            )
            assert not swap, f"swap conflict at t={t}"


def test_plan_start_equals_goal_is_trivial():
    grid = _grid(10, 10)
    start = grid.cell_center(grid.cell_index(3, 3))
    state = plan_paths([[start]], grid, [start])
    assert state.cell_paths[0] == [grid.cell_index(3, 3)]
    assert state.skipped == []


def test_plan_straight_run_takes_chebyshev_steps():
    grid = _grid(10, 10)
    start = grid.cell_center(grid.cell_index(0, 0))
    goal = grid.cell_center(grid.cell_index(5, 3))
    state = plan_paths([[goal]], grid, [start])
    path = state.cell_paths[0]
    assert path[0] == grid.cell_index(0, 0)
    assert path[-1] == grid.cell_index(5, 3)
    assert len(path) - 1 == 5  # diagonal moves allowed
    assert state.skipped == []


def test_plan_head_on_agents_resolve_without_conflict():
    grid = _grid(7, 3)
    a_start = grid.cell_center(grid.cell_index(0, 1))
    b_start = grid.cell_center(grid.cell_index(6, 1))
    state = plan_paths([[b_start], [a_start]], grid, [a_start, b_start])
    assert state.skipped == []
    assert state.cell_paths[0][-1] == grid.cell_index(6, 1)
    assert state.cell_paths[1][-1] == grid.cell_index(0, 1)
    _scan_conflicts(state.cell_paths)


def test_plan_contested_goal_skips_second_agent():
    grid = _grid(8, 8)
    goal = grid.cell_center(grid.cell_index(4, 4))
    a_start = grid.cell_center(grid.cell_index(0, 0))
    b_start = grid.cell_center(grid.cell_index(7, 7))
    state = plan_paths([[goal], [goal]], grid, [a_start, b_start])
    assert state.cell_paths[0][-1] == grid.cell_index(4, 4)
    assert (1, grid.cell_index(4, 4)) in state.skipped
    assert state.cell_paths[1][-1] != grid.cell_index(4, 4)
    _scan_conflicts(state.cell_paths)


def test_plan_random_instances_stay_conflict_free():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        grid = _grid(15, 15)
        starts = []
        taken = set()
        while len(starts) < 3:
            c = int(rng.integers(grid.n_cells))
            if c not in taken:
                taken.add(c)
                starts.append(c)
        sequences = []
        for _ in range(3):
            goals = [
                grid.cell_center(int(rng.integers(grid.n_cells)))
                for _ in range(int(rng.integers(1, 4)))
            ]
            sequences.append(goals)
        state = plan_paths(sequences, grid, [grid.cell_center(c) for c in starts])
        _scan_conflicts(state.cell_paths)


def test_plan_rejects_mismatched_inputs():
    grid = _grid(5, 5)
    with pytest.raises(ValueError):
        plan_paths([[]], grid, [])


def test_plan_world_paths_lift_above_terrain():
    heights = np.zeros((6, 6))
    heights[2, 3] = 1.5
    grid = GridMap(Position3(0.0, 0.0, 0.0), 1.0, 6, 6, heights=heights)
    start = grid.cell_center(grid.cell_index(0, 2))
    goal = grid.cell_center(grid.cell_index(5, 2))
    state = plan_paths([[goal]], grid, [start])
    world = state.world_paths(grid, lift=2.0)
    assert len(world[0]) == len(state.cell_paths[0])
    for pos, cell in zip(world[0], state.cell_paths[0]):
        center = grid.cell_center(cell)
        assert (pos.x, pos.y) == (center.x, center.y)
        assert pos.z == pytest.approx(center.z + 2.0)


# ---------------------------------------------------------------------------
# Zigzag baseline.


def test_zigzag_three_agents_strip_geometry():
    grid = _grid(100, 100, 0.5)  # 50 m x 50 m
    paths = zigzag(grid, lateral_step=2.0, n_agents=3)
    assert len(paths) == 3
    strip = 50.0 / 3.0
    for a, path in enumerate(paths):
        xs = sorted({p.x for p in path})
        assert len(xs) == 9  # floor(16.67 / 2) + 1 sweep lines
        for x in xs:
            assert a * strip - 1e-9 <= x - 0.0 <= (a + 1) * strip + 1e-9
        steps = np.diff(xs)
        np.testing.assert_allclose(steps, 2.0, atol=1e-9)
        # lines centered inside the strip
        assert xs[0] - a * strip == pytest.approx((strip - 16.0) / 2.0)


def test_zigzag_single_agent_step_equal_to_width():
    grid = _grid(20, 20, 0.5)  # 10 m x 10 m
    paths = zigzag(grid, lateral_step=10.0, n_agents=1)
    xs = sorted({p.x for p in paths[0]})
    assert xs == [0.0, 10.0]


def test_zigzag_step_wider_than_strip_gives_center_line():
    grid = _grid(20, 20, 0.5)
    paths = zigzag(grid, lateral_step=25.0, n_agents=1)
    xs = {p.x for p in paths[0]}
    assert xs == {5.0}


def test_zigzag_covers_every_cell_center():
    grid = _grid(40, 40, 0.5)  # 20 m x 20 m
    step = 3.0
    paths = zigzag(grid, lateral_step=step, n_agents=2)
    pts = np.array([[p.x, p.y] for path in paths for p in path])
    centers = grid.centers()[:, :2]
    d2 = ((centers[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    assert np.sqrt(d2.min(axis=1)).max() <= step / math.sqrt(2.0) + 1e-9


def test_zigzag_serpentine_alternates_direction():
    grid = _grid(20, 20, 0.5)
    paths = zigzag(grid, lateral_step=2.0, n_agents=1)
    path = paths[0]
    xs = sorted({p.x for p in path})
    per_line = [[p.y for p in path if p.x == x] for x in xs]
    for k, ys in enumerate(per_line):
        if k % 2 == 0:
            assert ys == sorted(ys)
        else:
            assert ys == sorted(ys, reverse=True)


def test_zigzag_validation_errors():
    grid = _grid(10, 10)
    with pytest.raises(ValueError):
        zigzag(grid, lateral_step=0.0, n_agents=1)
    with pytest.raises(ValueError):
        zigzag(grid, lateral_step=2.0, n_agents=0)
