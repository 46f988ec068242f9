"""How consistent is a heuristic? Oracle, Euclidean and (if shipped) the learned one."""

from pathlib import Path

import numpy as np

from pnoplan.cli import bench_maps
from pnoplan.config import RunConfig
from pnoplan.consistency import check_triangle, measure_epsilon_consistency
from pnoplan.grid import erode
from pnoplan.operator.model import load_model
from pnoplan.planner import Heuristic, euclidean_heuristic, make_pno_heuristic

CKPT = Path(__file__).resolve().parents[1] / "artifacts" / "heuristic.eikm"

_, grid, pairs = bench_maps(RunConfig(bench_maps=1, bench_pairs=1))[0]
_, goal, V = pairs[0]

heuristics = [(Heuristic(np.where(np.isfinite(V), V, 0.0), "oracle"), None),
              (euclidean_heuristic(grid, (goal.row, goal.col)), None)]
if CKPT.exists():
    model = load_model(CKPT, np.float32)[0]
    for L in (0, 3, 6):
        heuristics.append((make_pno_heuristic(model, grid, goal, L), erode(grid, L)))
    n, worst = check_triangle(model, grid, 10000)
    print(f"triangle inequality: {n} violations in 10000 triples (max gap {worst:.3g})\n")

print(f"{'heuristic':<11} {'eps_NO':>8} {'bound':>8} {'eps':>8} {'holds':>5}")
for heur, oracle_grid in heuristics:
    r = measure_epsilon_consistency(heur, grid, goal, 200, oracle_grid=oracle_grid)
    print(f"{heur.label:<11} {r.eps_NO_measured:8.4f} {r.eps_lemma_bound:8.4f} {r.eps_empirical:8.4f} "
          f"{str(r.bound_holds):>5}")
