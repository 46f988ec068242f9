"""A walk through the numerical side: map, signed distance, value function, descent path."""

import numpy as np

from pnoplan.eikonal import brute_force_sdf, dijkstra_value, fmm_sdf, fmm_value
from pnoplan.grid import GoalSpec, MapParams, generate_random_map
from pnoplan.planner import gradient_descent_plan

grid = generate_random_map(seed=3, height=32, width=32, params=MapParams((4, 8), (3, 9)))
print(f"{grid.height}x{grid.width} map, {grid.cells.sum()} safe cells, cell size {grid.cell_size:.4f}")
for row in grid.cells:
    print("".join(".#"[int(not c)] for c in row))

# signed distance: fast marching from the interface vs exhaustive search
sdf = fmm_sdf(grid).values
err = np.abs(sdf - brute_force_sdf(grid).values).max()
print(f"\nsdf range [{sdf.min():.3f}, {sdf.max():.3f}], max deviation from brute force {err / grid.cell_size:.2f} cells")

# value function toward the goal: continuous (FMM) vs 8-connected lattice (Dijkstra)
goal = GoalSpec(16, 16)
V = fmm_value(grid, goal).values
D = dijkstra_value(grid, goal).values
both = np.isfinite(V) & np.isfinite(D)
print(f"reachable cells {both.sum()}, mean FMM/Dijkstra ratio {np.mean(V[both][D[both] > 0] / D[both][D[both] > 0]):.4f}")

# follow the negative gradient of the FMM value from a far corner
far = np.unravel_index(np.argmax(np.where(both, V, -1)), V.shape)
path, stats = gradient_descent_plan(fmm_value(grid, goal), grid.center(*far), grid=grid, goal=goal)
print(f"descent from {tuple(map(int, far))}: {len(path)} waypoints, length {path.length:.4f}, "
      f"lattice optimum {D[far]:.4f}, success {stats.success}")
