"""A*, learned-heuristic A*, RRT and RRT* on one desk-scale map."""

from pathlib import Path

import numpy as np

from pnoplan.cli import bench_maps
from pnoplan.config import RunConfig
from pnoplan.operator.model import load_model
from pnoplan.planner import (RrtParams, astar, default_erosion, epsilon_estimate, euclidean_heuristic,
                             make_pno_heuristic, rrt, rrt_star)

CKPT = Path(__file__).resolve().parents[1] / "artifacts" / "heuristic.eikm"

_, grid, pairs = bench_maps(RunConfig(bench_maps=1, bench_pairs=3))[0]
model = load_model(CKPT, np.float32)[0] if CKPT.exists() else None
if model is None:
    print(f"({CKPT.name} not found, skipping the learned heuristic)")
L = default_erosion(grid.height)

print(f"{'pair':>4} {'planner':<16} {'length':>8} {'eps':>7} {'nodes':>7}")
for k, (start, goal, V) in enumerate(pairs):
    runs = [("astar euclidean", lambda: astar(grid, start, goal, euclidean_heuristic(grid, (goal.row, goal.col))))]
    if model is not None:
        runs.append((f"astar pno L={L}", lambda: astar(grid, start, goal, make_pno_heuristic(model, grid, goal, L))))
        runs.append(("astar pno L=0", lambda: astar(grid, start, goal, make_pno_heuristic(model, grid, goal, 0))))
    runs.append(("rrt", lambda: rrt(grid, start, goal, RrtParams(seed=k))))
    runs.append(("rrt*", lambda: rrt_star(grid, start, goal, RrtParams(seed=k))))
    for name, fn in runs:
        path, st = fn()
        eps = epsilon_estimate(st.path_length, grid, start, goal, V) if st.success else float("nan")
        print(f"{k:>4} {name:<16} {st.path_length:8.4f} {eps:7.4f} {st.nodes_expanded:7d}")
