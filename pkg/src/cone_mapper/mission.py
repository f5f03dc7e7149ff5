"""Closed-loop mission driver, offline replay, and batch aggregation.

A mission alternates simulation steps with estimation cycles. Every cycle
ingests the cones and viewpoints produced since the previous one, folds the
viewpoints into the sensitivity field, rebuilds the intensity estimate from
scratch over all cached measurement rows, writes one metrics row, and (for the
active strategy) plans fresh routes. Replay repeats the estimation side of
that loop over recorded logs with the same cycle boundaries, which reproduces
the online estimates exactly because log floats round-trip losslessly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from cone_mapper.config import MissionConfig, render_config, resolve
from cone_mapper.core import GridMap, Position3, SensorPose, grid_from_config, polar_angles
from cone_mapper.physics import (
    AttenuationModel,
    DetectorGeometry,
    LookupTable,
    build_chord_lookup,
    detection_weight,
    load_lookup,
)
from cone_mapper.recon import (
    IntensityField,
    ProjectionParams,
    SensitivityField,
    local_maxima,
    localization_metrics,
    mlem,
    save_field,
    sensitivity_update,
    system_row,
    uniform_intensity,
)
from cone_mapper.sim import (
    AgentState,
    NoiseSpec,
    SourceSpec,
    WorldState,
    format_float,
    read_cone_log,
    read_viewpoint_log,
    step,
    write_cone_log,
    write_viewpoint_log,
)
from cone_mapper.strategy import (
    SEQUENCE_GUARD,
    StrategyConfig,
    assign_to_agents,
    generate_waypoints,
    plan_paths,
    sequence,
    zigzag,
)

# Ratio of photon-counting events to usable cone measurements, used only for
# the informational event accounting in the run header.
PHOTOPEAK_PER_CONE = 10.02 / 0.52

METRICS_SCHEMA = "# schema: metrics/1"
PLAN_SCHEMA = "# schema: plan/1"
PLAN_HEADER = "cycle,t,agent,record,step,cell,x,y"

# Event timestamps are compared against cycle boundaries with this slack to
# absorb the one-ulp difference between accumulated and multiplied step times.
_TIME_EPS = 1e-9


def _package_version() -> str:
    import cone_mapper

    return cone_mapper.__version__


def build_table(cfg: MissionConfig) -> LookupTable:
    if cfg.table_source == "builtin":
        geom = DetectorGeometry(kappa=cfg.kappa)
        return build_chord_lookup(
            geom, cfg.n_phi, cfg.n_theta, cfg.table_samples, cfg.table_seed
        )
    return load_lookup(cfg.table_source)


def build_grid(cfg: MissionConfig) -> GridMap:
    return grid_from_config(
        Position3(cfg.origin_x, cfg.origin_y, cfg.origin_z),
        cfg.extent_x,
        cfg.extent_y,
        cfg.resolution,
    )


def default_agent_starts(cfg: MissionConfig) -> tuple[tuple[float, float], ...]:
    """Spread agents along the near edge of the area."""
    y = cfg.origin_y + 0.5 * cfg.resolution
    return tuple(
        (cfg.origin_x + (i + 0.5) * cfg.extent_x / cfg.n_agents, y)
        for i in range(cfg.n_agents)
    )


def compute_s_min(cfg: MissionConfig, table: LookupTable) -> float:
    """Sensitivity accumulated at a ground point by one straight fly-past.

    The reference pass runs the full long-extent of the area at flight height,
    offset 3 m laterally from the point, sampled at the mission time step and
    speed. A cell at or above this value has effectively been checked by at
    least one close pass.
    """
    atten = AttenuationModel(cfg.mu)
    half = max(cfg.extent_x, cfg.extent_y) / 2.0
    ds = cfg.max_speed * cfg.dt
    n = max(1, int(math.ceil(2.0 * half / ds)))
    total = 0.0
    for k in range(n + 1):
        x = -half + k * ds
        pose = SensorPose(Position3(x, 0.0, cfg.flight_height), yaw=0.0)
        dist = math.sqrt(x * x + 9.0 + cfg.flight_height**2)
        phi, theta = polar_angles(pose, Position3(0.0, 3.0, 0.0))
        total += detection_weight(table, atten, dist, phi, theta) * cfg.dt
    return total


@dataclass(frozen=True)
class MetricsRow:
    """One estimation-cycle snapshot of mission progress."""

    t: float
    cycle: int
    n_cones: int
    rmse: float
    n_localized: int
    frac_unexplored: float
    per_source_err: tuple[float, ...]

    def to_csv(self) -> str:
        fields = [
            format_float(self.t),
            str(self.cycle),
            str(self.n_cones),
            format_float(self.rmse),
            str(self.n_localized),
            format_float(self.frac_unexplored),
        ]
        fields += [format_float(e) for e in self.per_source_err]
        return ",".join(fields)


def metrics_header(n_sources: int) -> str:
    cols = ["t", "cycle", "n_cones", "rmse", "n_localized", "frac_unexplored"]
    cols += [f"per_source_err_{i}" for i in range(1, n_sources + 1)]
    return ",".join(cols)


def write_metrics_csv(rows: list[MetricsRow], n_sources: int, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(METRICS_SCHEMA + "\n")
        f.write(metrics_header(n_sources) + "\n")
        for row in rows:
            f.write(row.to_csv() + "\n")


def normalize_csv(text: str) -> str:
    """Drop comment lines; used when comparing CSVs across run and replay."""
    return "\n".join(l for l in text.splitlines() if not l.startswith("#")) + "\n"


@dataclass
class MissionReport:
    """Where a mission wrote its artifacts, plus the in-memory metrics series."""

    config: MissionConfig
    metrics: list[MetricsRow]
    metrics_csv: Path
    intensity_dump: Path
    sensitivity_dump: Path
    header_path: Path
    cone_log: Path | None
    viewpoint_log: Path | None
    n_cones: int
    completed_early: bool
    plan_csv: Path | None = None

    @property
    def final(self) -> MetricsRow | None:
        return self.metrics[-1] if self.metrics else None


class _Estimator:
    """The per-cycle estimation state shared by live runs and replay."""

    def __init__(self, cfg: MissionConfig, grid: GridMap, table: LookupTable, s_min: float):
        self.cfg = cfg
        self.grid = grid
        self.table = table
        self.s_min = s_min
        self.params = ProjectionParams(
            sigma=cfg.sigma,
            attenuation=AttenuationModel(cfg.mu),
            sparsity_rel=cfg.sparsity_rel,
        )
        self.sens = SensitivityField(grid, default_dt=cfg.dt)
        self.lam: IntensityField = uniform_intensity(grid)
        self.rows = []
        self.n_cones = 0
        self.n_empty_rows = 0
        self.truth = [
            Position3(x, y, grid.height_at(x, y)) for x, y, _ in cfg.sources
        ]

    def ingest(self, cones, viewpoints) -> None:
        if viewpoints:
            sensitivity_update(self.sens, viewpoints, self.grid, self.params, self.table)
        for cone in cones:
            row = system_row(cone, self.grid, self.params, self.table)
            if row.is_empty:
                self.n_empty_rows += 1
            else:
                self.rows.append(row)
        self.n_cones += len(cones)

    def estimate(self) -> None:
        if self.rows:
            self.lam = mlem(uniform_intensity(self.grid), self.rows, self.sens, self.cfg.n_iter)
        else:
            self.lam = uniform_intensity(self.grid)

    def metrics_row(self, t: float, cycle: int) -> MetricsRow:
        frac = float(np.mean(self.sens.values < self.s_min))
        if not self.truth:
            return MetricsRow(t, cycle, self.n_cones, math.nan, 0, frac, ())
        peaks = local_maxima(self.lam, self.grid, n=len(self.truth))
        m = localization_metrics(peaks.positions(), self.truth, tolerance=2.0)
        return MetricsRow(
            t, cycle, self.n_cones, m.rmse, m.n_within, frac, m.per_source_error
        )


def _planning_steps(n_steps: int, steps_per_cycle: int) -> list[int]:
    return list(range(0, n_steps, steps_per_cycle))


def _strategy_config(cfg: MissionConfig, s_min: float) -> StrategyConfig:
    return StrategyConfig(
        s_min=s_min,
        s_max=cfg.s_max_factor * s_min,
        k_explore=cfg.k_explore,
        recent_radius=cfg.recent_radius,
        recent_window=cfg.recent_window,
        replan_period=cfg.replan_period,
    )


def run_mission(cfg: MissionConfig, out_dir, plan_dump: bool = False) -> MissionReport:
    """Simulate one full mission and write all artifacts into out_dir.

    With ``plan_dump`` set, every planning decision is also recorded in
    ``plans.csv``: the ordered waypoints each agent was assigned and the grid
    path planned to reach them, one row per waypoint or path step.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    table = build_table(cfg)
    grid = build_grid(cfg)
    s_min = cfg.s_min if cfg.s_min is not None else compute_s_min(cfg, table)
    starts = cfg.agent_starts if cfg.agent_starts is not None else default_agent_starts(cfg)
    resolved = resolve(cfg, s_min, starts)

    header_path = out / "run_header.txt"
    with open(header_path, "w", encoding="utf-8") as f:
        f.write(f"# run header, package version {_package_version()}\n")
        f.write(render_config(resolved))

    sources = [
        SourceSpec(Position3(x, y, grid.height_at(x, y)), act) for x, y, act in cfg.sources
    ]
    noise = NoiseSpec(
        angle_noise=cfg.angle_noise,
        p_ambiguity=cfg.p_ambiguity,
        background_rate=cfg.background_rate,
        beta_min=cfg.beta_min,
        beta_max=cfg.beta_max,
    )
    agents = []
    for i, (sx, sy) in enumerate(starts, start=1):
        z = grid.height_at(sx, sy) + cfg.flight_height
        agents.append(
            AgentState(
                i,
                SensorPose(Position3(sx, sy, z)),
                max_speed=cfg.max_speed,
                flight_height=cfg.flight_height,
            )
        )
    world = WorldState(
        grid, sources, agents, table, AttenuationModel(cfg.mu), noise,
        rng=np.random.default_rng(cfg.seed),
    )

    strat = _strategy_config(cfg, s_min)
    est = _Estimator(cfg, grid, table, s_min)

    n_steps = int(math.floor(cfg.duration / cfg.dt + 1e-9))
    steps_per_cycle = int(round(cfg.replan_period / cfg.dt))
    plan_steps = set(_planning_steps(n_steps, steps_per_cycle))

    all_cones = []
    all_views = []
    pend_cones = []
    pend_views = []
    visits: list[tuple[float, Position3]] = []
    metrics_rows: list[MetricsRow] = []
    plan_lines: list[str] = []
    cycle = 0
    completed_early = False

    def dump_waypoints(row_cycle: int, t: float, seqs) -> None:
        for agent, seq in zip(world.agents, seqs):
            for k, wp in enumerate(seq):
                plan_lines.append(
                    f"{row_cycle},{format_float(t)},{agent.agent_id},waypoint,{k},"
                    f"{grid.nearest_cell(wp)},{format_float(wp.x)},{format_float(wp.y)}"
                )

    def dump_paths(row_cycle: int, t: float, cell_paths) -> None:
        for agent, path in zip(world.agents, cell_paths):
            for k, cell in enumerate(path):
                c = grid.cell_center(cell)
                plan_lines.append(
                    f"{row_cycle},{format_float(t)},{agent.agent_id},path,{k},{cell},"
                    f"{format_float(c.x)},{format_float(c.y)}"
                )

    if cfg.strategy == "zigzag":
        routes = zigzag(grid, cfg.zigzag_step, len(world.agents))
        for agent, path in zip(world.agents, routes):
            agent.set_route(
                [Position3(p.x, p.y, p.z + cfg.flight_height) for p in path]
            )
        if plan_dump:
            dump_waypoints(0, 0.0, routes)

    def run_cycle(t: float, plan: bool) -> bool:
        """Ingest, re-estimate, log metrics; optionally replan. True to stop early."""
        nonlocal cycle
        row_cycle = cycle
        est.ingest(pend_cones, pend_views)
        for v in pend_views:
            visits.append((v.timestamp, v.pose.position))
        pend_cones.clear()
        pend_views.clear()
        visits[:] = [(tv, p) for tv, p in visits if t - tv <= strat.recent_window]
        est.estimate()
        metrics_rows.append(est.metrics_row(t, cycle))
        cycle += 1
        if not plan or cfg.strategy != "active":
            return False
        wps = generate_waypoints(
            est.lam, est.sens, grid, strat, recent_visits=visits, now=t, seed=cfg.seed
        )
        if wps.is_empty:
            return True
        agent_pos = [a.pose.position for a in world.agents]
        groups = assign_to_agents(wps.all_points(), agent_pos)
        seqs = [sequence(group[:SEQUENCE_GUARD], pos) for group, pos in zip(groups, agent_pos)]
        plan_state = plan_paths(seqs, grid, agent_pos)
        routes = plan_state.world_paths(grid, lift=cfg.flight_height)
        for agent, route in zip(world.agents, routes):
            agent.set_route(route)
        if plan_dump:
            dump_waypoints(row_cycle, t, seqs)
            dump_paths(row_cycle, t, plan_state.cell_paths)
        return False

    stop = False
    for idx in range(n_steps):
        if idx in plan_steps:
            world.clock = idx * cfg.dt
            if run_cycle(idx * cfg.dt, plan=True):
                stop = True
                break
        _, cones, views = step(world, cfg.dt)
        pend_cones.extend(cones)
        pend_views.extend(views)
        all_cones.extend(cones)
        all_views.extend(views)
    if not stop:
        run_cycle(n_steps * cfg.dt, plan=False)
    else:
        completed_early = True

    cone_log = out / "cones.csv"
    viewpoint_log = out / "viewpoints.csv"
    metrics_csv = out / "metrics.csv"
    lam_dump = out / "intensity.txt"
    sens_dump = out / "sensitivity.txt"
    write_cone_log(all_cones, cone_log)
    write_viewpoint_log(all_views, viewpoint_log)
    write_metrics_csv(metrics_rows, len(cfg.sources), metrics_csv)
    save_field(est.lam.values, grid, lam_dump)
    save_field(est.sens.values, grid, sens_dump)
    plan_csv = None
    if plan_dump:
        plan_csv = out / "plans.csv"
        with open(plan_csv, "w", encoding="utf-8", newline="\n") as f:
            f.write(PLAN_SCHEMA + "\n")
            f.write(PLAN_HEADER + "\n")
            for line in plan_lines:
                f.write(line + "\n")
    with open(header_path, "a", encoding="utf-8") as f:
        f.write(f"# cones_emitted = {len(all_cones)}\n")
        f.write(f"# rows_dropped_empty = {est.n_empty_rows}\n")
        f.write(f"# photopeak_events_expected = {len(all_cones) * PHOTOPEAK_PER_CONE:.1f}\n")

    return MissionReport(
        config=resolved,
        metrics=metrics_rows,
        metrics_csv=metrics_csv,
        intensity_dump=lam_dump,
        sensitivity_dump=sens_dump,
        header_path=header_path,
        cone_log=cone_log,
        viewpoint_log=viewpoint_log,
        n_cones=len(all_cones),
        completed_early=completed_early,
        plan_csv=plan_csv,
    )


def run_replay(cfg: MissionConfig, cone_log, viewpoint_log, out_dir) -> MissionReport:
    """Recompute estimates and metrics from recorded logs, without a simulator.

    Cycle boundaries, ingestion order, and all estimator arithmetic match the
    live loop, so a replay of a run's own logs reproduces its metrics exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    table = build_table(cfg)
    grid = build_grid(cfg)
    s_min = cfg.s_min if cfg.s_min is not None else compute_s_min(cfg, table)
    starts = cfg.agent_starts if cfg.agent_starts is not None else default_agent_starts(cfg)
    resolved = resolve(cfg, s_min, starts)

    header_path = out / "replay_header.txt"
    with open(header_path, "w", encoding="utf-8") as f:
        f.write(f"# replay header, package version {_package_version()}\n")
        f.write(render_config(resolved))

    cones = read_cone_log(cone_log)
    views = read_viewpoint_log(viewpoint_log)
    est = _Estimator(cfg, grid, table, s_min)
    strat = _strategy_config(cfg, s_min)

    n_steps = int(math.floor(cfg.duration / cfg.dt + 1e-9))
    steps_per_cycle = int(round(cfg.replan_period / cfg.dt))
    planning = _planning_steps(n_steps, steps_per_cycle)
    cycle_times = [(i * cfg.dt, True) for i in planning]
    cycle_times.append((n_steps * cfg.dt, False))

    metrics_rows = []
    visits: list[tuple[float, Position3]] = []
    stopped_early = False
    ci = vi = 0
    for cycle, (t, is_planning) in enumerate(cycle_times):
        batch_cones = []
        batch_views = []
        while ci < len(cones) and cones[ci].timestamp <= t + _TIME_EPS:
            batch_cones.append(cones[ci])
            ci += 1
        while vi < len(views) and views[vi].timestamp <= t + _TIME_EPS:
            batch_views.append(views[vi])
            vi += 1
        est.ingest(batch_cones, batch_views)
        for v in batch_views:
            visits.append((v.timestamp, v.pose.position))
        visits = [(tv, p) for tv, p in visits if t - tv <= strat.recent_window]
        est.estimate()
        metrics_rows.append(est.metrics_row(t, cycle))
        # Mirror the live loop's stopping rule so the metrics series lines up
        # row for row: an active mission ends once nothing is left to visit.
        if is_planning and cfg.strategy == "active":
            wps = generate_waypoints(
                est.lam, est.sens, grid, strat, recent_visits=visits, now=t, seed=cfg.seed
            )
            if wps.is_empty:
                stopped_early = True
                break

    metrics_csv = out / "metrics.csv"
    lam_dump = out / "intensity.txt"
    sens_dump = out / "sensitivity.txt"
    write_metrics_csv(metrics_rows, len(cfg.sources), metrics_csv)
    save_field(est.lam.values, grid, lam_dump)
    save_field(est.sens.values, grid, sens_dump)

    return MissionReport(
        config=resolved,
        metrics=metrics_rows,
        metrics_csv=metrics_csv,
        intensity_dump=lam_dump,
        sensitivity_dump=sens_dump,
        header_path=header_path,
        cone_log=Path(cone_log),
        viewpoint_log=Path(viewpoint_log),
        n_cones=len(cones),
        completed_early=stopped_early,
    )


@dataclass
class BatchResult:
    """Per-seed reports plus the aggregate artifacts of a batch run."""

    reports: list[MissionReport]
    summary_csv: Path
    timeseries_csv: Path


def time_to_all_localized(report: MissionReport) -> float:
    """First cycle time with every source within tolerance; inf if never."""
    n = len(report.config.sources)
    if n == 0:
        return math.inf
    for row in report.metrics:
        if row.n_localized == n:
            return row.t
    return math.inf


def run_batch(cfg: MissionConfig, n_runs: int, seed_base: int, out_dir) -> BatchResult:
    """Repeat the mission across seeds and aggregate RMSE and localization curves.

    Partial results stay on disk if a run fails. Early-terminating runs simply
    stop contributing to later time bins.
    """
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary_csv = out / "batch_summary.csv"
    timeseries_csv = out / "batch_timeseries.csv"

    reports: list[MissionReport] = []
    try:
        for k in range(n_runs):
            seed = seed_base + k
            run_cfg = replace(cfg, seed=seed)
            reports.append(run_mission(run_cfg, out / f"run_{seed}"))
    finally:
        _write_batch_outputs(reports, summary_csv, timeseries_csv)
    return BatchResult(reports, summary_csv, timeseries_csv)


def _write_batch_outputs(reports: list[MissionReport], summary_csv, timeseries_csv) -> None:
    with open(summary_csv, "w", encoding="utf-8", newline="\n") as f:
        f.write("# schema: batch-summary/1\n")
        f.write("seed,n_cones,final_rmse,final_localized,time_to_all_localized\n")
        for r in reports:
            final = r.final
            f.write(
                ",".join(
                    [
                        str(r.config.seed),
                        str(r.n_cones),
                        format_float(final.rmse if final else math.nan),
                        str(final.n_localized if final else 0),
                        format_float(time_to_all_localized(r)),
                    ]
                )
                + "\n"
            )

    bins: dict[float, list[MetricsRow]] = {}
    for r in reports:
        for row in r.metrics:
            bins.setdefault(row.t, []).append(row)
    with open(timeseries_csv, "w", encoding="utf-8", newline="\n") as f:
        f.write("# schema: batch-timeseries/1\n")
        f.write("t,n_runs,mean_rmse,mean_localized\n")
        for t in sorted(bins):
            rows = bins[t]
            finite = [row.rmse for row in rows if math.isfinite(row.rmse)]
            mean_rmse = sum(finite) / len(finite) if finite else math.inf
            mean_loc = sum(row.n_localized for row in rows) / len(rows)
            f.write(
                f"{format_float(t)},{len(rows)},{format_float(mean_rmse)},{format_float(mean_loc)}\n"
            )


def resolve_out_dir(cfg: MissionConfig) -> Path:
    """Output directory, with the CONE_MAPPER_OUT environment override applied."""
    env = os.environ.get("CONE_MAPPER_OUT")
    return Path(env) if env else Path(cfg.output_dir)


__all__ = [
    "BatchResult",
    "MetricsRow",
    "MissionReport",
    "build_grid",
    "build_table",
    "compute_s_min",
    "default_agent_starts",
    "metrics_header",
    "normalize_csv",
    "resolve_out_dir",
    "run_batch",
    "run_mission",
    "run_replay",
    "time_to_all_localized",
    "write_metrics_csv",
]
