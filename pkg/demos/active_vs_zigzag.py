"""Compare the estimate-driven search strategy against a fixed zigzag sweep.

Same map, same sources, same seeds; the only difference is how waypoints are
chosen. The active strategy reads the current emission estimate and splits
its attention between candidate peaks and poorly covered cells, while the
zigzag agents fly a predefined ladder. Two numbers matter: how fast every
source is first pinned down, and whether the fix survives to the end of the
mission. On a map this small the ladder grazes everything within a minute,
so the first number flatters it; the second shows which strategy keeps its
peaks once coverage thins out.
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np

from cone_mapper.config import parse_config
from cone_mapper.mission import run_mission, time_to_all_localized

CONFIG = """
grid.extent_x = 30.0
grid.extent_y = 30.0
grid.resolution = 0.5
agents.count = 2
recon.n_iter = 30
recon.sparsity_rel = 1.0e-4
strategy.s_min = 3.5e-7
strategy.recent_radius = 1.5
strategy.recent_window = 15.0
run.strategy = {strategy}
run.dt = 0.5
run.duration = 240.0
run.seed = {seed}
source.1.x = 7.0
source.1.y = 8.0
source.1.activity = 2.0e9
source.2.x = 23.0
source.2.y = 11.0
source.2.activity = 2.0e9
source.3.x = 12.0
source.3.y = 24.0
source.3.activity = 2.0e9
"""

SEEDS = (1, 2, 3, 4, 5)
N_SOURCES = 3


def run_one(strategy: str, seed: int):
    cfg = parse_config(CONFIG.format(strategy=strategy, seed=seed))
    tmp = Path(tempfile.mkdtemp(prefix="cmp_"))
    report = run_mission(cfg, tmp)
    shutil.rmtree(tmp)
    return time_to_all_localized(report), report.final


def main() -> None:
    print("        ---------- active ----------   ---------- zigzag ----------")
    print("seed    t_all[s]  end rmse[m]  held     t_all[s]  end rmse[m]  held")
    held = {"active": 0, "zigzag": 0}
    active_times = []
    for seed in SEEDS:
        cells = []
        for strategy in ("active", "zigzag"):
            t_all, final = run_one(strategy, seed)
            keeps = final.n_localized == N_SOURCES
            held[strategy] += keeps
            if strategy == "active":
                active_times.append(t_all)
            cells.append(f"{t_all:8.0f}  {final.rmse:11.2f}  {'yes' if keeps else ' no'}")
        print(f"  {seed}   {cells[0]}     {cells[1]}")

    print(f"\nholds every source to mission end: active {held['active']}/{len(SEEDS)}, "
          f"zigzag {held['zigzag']}/{len(SEEDS)}")
    finite = [t for t in active_times if np.isfinite(t)]
    if finite:
        print(f"median active time to pin down all sources: {np.median(finite):.0f} s")


if __name__ == "__main__":
    main()
