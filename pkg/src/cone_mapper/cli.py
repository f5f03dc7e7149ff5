"""Command line front end: run, replay, batch, and lookup-table building.

Exit codes: 0 on success, 2 for configuration problems (unreadable or invalid
config, unknown keys), 3 for runtime failures (bad logs, failed runs). The
environment variable CONE_MAPPER_OUT overrides the configured output
directory.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from cone_mapper.config import MissionConfig, load_config
from cone_mapper.core import ConfigurationError
from cone_mapper.mission import (
    build_table,
    resolve_out_dir,
    run_batch,
    run_mission,
    run_replay,
    time_to_all_localized,
)
from cone_mapper.physics import save_lookup

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cone-mapper",
        description="Multi-agent Compton-cone radiation mapping: simulate, replay, batch.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one mission from a config file")
    p.add_argument("config", help="path to a mission config")
    p.add_argument(
        "--plan-dump",
        action="store_true",
        help="also write plans.csv with per-agent ordered waypoints and grid paths",
    )

    p = sub.add_parser("replay", help="recompute estimates and metrics from recorded logs")
    p.add_argument("config", help="path to the mission config the logs were made with")
    p.add_argument("--cones", required=True, help="cone log CSV")
    p.add_argument("--viewpoints", required=True, help="viewpoint log CSV")

    p = sub.add_parser("batch", help="repeat a mission across seeds and aggregate")
    p.add_argument("config", help="path to a mission config")
    p.add_argument("--runs", type=int, default=10, help="number of seeded repetitions")
    p.add_argument(
        "--seed-base", type=int, default=None, help="first seed (default: run.seed from config)"
    )

    p = sub.add_parser("table", help="lookup-table utilities")
    tsub = p.add_subparsers(dest="table_command", required=True)
    t = tsub.add_parser("build", help="build the detection lookup table and save it")
    t.add_argument("config", help="path to a mission config (physics section is used)")
    t.add_argument("--out", required=True, help="output table file")

    return parser


def _load(config_path: str) -> MissionConfig:
    try:
        return load_config(config_path)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG) from exc
    except OSError as exc:
        print(f"config error: cannot read {config_path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG) from exc


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    out = resolve_out_dir(cfg)
    report = run_mission(cfg, out, plan_dump=args.plan_dump)
    final = report.final
    print(f"run complete: {report.n_cones} cones, {len(report.metrics)} cycles")
    if final is not None and final.per_source_err:
        print(
            f"final t={final.t:g}s rmse={final.rmse:.3f} m "
            f"localized={final.n_localized}/{len(cfg.sources)}"
        )
    if report.plan_csv is not None:
        print(f"plan dump: {report.plan_csv}")
    print(f"outputs in {out}")
    return EXIT_OK


def _cmd_replay(args) -> int:
    cfg = _load(args.config)
    out = resolve_out_dir(cfg) / "replay"
    report = run_replay(cfg, args.cones, args.viewpoints, out)
    print(f"replay complete: {report.n_cones} cones, {len(report.metrics)} cycles")
    print(f"outputs in {out}")
    return EXIT_OK


def _cmd_batch(args) -> int:
    cfg = _load(args.config)
    seed_base = args.seed_base if args.seed_base is not None else cfg.seed
    out = resolve_out_dir(cfg)
    result = run_batch(cfg, args.runs, seed_base, out)
    times = [time_to_all_localized(r) for r in result.reports]
    solved = [t for t in times if math.isfinite(t)]
    print(f"batch complete: {len(result.reports)} runs, seeds {seed_base}..{seed_base + args.runs - 1}")
    if solved:
        print(
            f"all-sources-localized in {len(solved)}/{len(times)} runs, "
            f"median time {sorted(solved)[len(solved) // 2]:g} s"
        )
    print(f"summary: {result.summary_csv}")
    print(f"timeseries: {result.timeseries_csv}")
    return EXIT_OK


def _cmd_table_build(args) -> int:
    cfg = _load(args.config)
    table = build_table(cfg)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    save_lookup(table, out)
    v = table.values
    print(
        f"table {table.n_phi}x{table.n_theta} written to {out} "
        f"(min {v.min():.3e}, mean {v.mean():.3e}, max {v.max():.3e})"
    )
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "replay":
            return _cmd_replay(args)
        if args.command == "batch":
            return _cmd_batch(args)
        if args.command == "table" and args.table_command == "build":
            return _cmd_table_build(args)
        raise AssertionError(f"unhandled command {args.command!r}")
    except SystemExit:
        raise
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not crashes
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
