"""Numerical Eikonal solvers: fast marching, signed distance, lattice Dijkstra.

These produce the training targets for the neural operators and serve as the
reference every learned quantity is checked against.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .grid import GoalSpec, OccupancyGrid, ScalarField

SQRT2 = math.sqrt(2.0)
INF = math.inf

_FAR, _TRIAL, _KNOWN = 0, 1, 2
_N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_N8 = _N4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass(frozen=True)
class SolverConfig:
    connectivity: int = 8
    obstacle_value: float = INF

    def __post_init__(self):
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


def _march(V: np.ndarray, state: np.ndarray, region: np.ndarray, cost: np.ndarray,
           h: float, heap: list) -> None:
    """First-order upwind fast marching over ``region`` from the KNOWN cells.

    ``heap`` must already hold the TRIAL entries. Updates ``V`` in place.
    """
    H, W = V.shape
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        v, i, j = pop(heap)
        if state[i, j] == _KNOWN or v > V[i, j]:
            continue
        state[i, j] = _KNOWN
        for di, dj in _N4:
            ni, nj = i + di, j + dj
            if not (0 <= ni < H and 0 <= nj < W) or not region[ni, nj] or state[ni, nj] == _KNOWN:
                continue
            a = INF
            if ni > 0 and state[ni - 1, nj] == _KNOWN:
                a = V[ni - 1, nj]
            if ni < H - 1 and state[ni + 1, nj] == _KNOWN and V[ni + 1, nj] < a:
                a = V[ni + 1, nj]
            b = INF
            if nj > 0 and state[ni, nj - 1] == _KNOWN:
                b = V[ni, nj - 1]
            if nj < W - 1 and state[ni, nj + 1] == _KNOWN and V[ni, nj + 1] < b:
                b = V[ni, nj + 1]
            ch = cost[ni, nj] * h
            if a == INF or b == INF or abs(a - b) >= ch:
                cand = min(a, b) + ch
            else:
                cand = 0.5 * (a + b + math.sqrt(2.0 * ch * ch - (a - b) ** 2))
            if cand < V[ni, nj]:
                V[ni, nj] = cand
                state[ni, nj] = _TRIAL
                push(heap, (cand, ni, nj))


def fmm_value(grid: OccupancyGrid, goal: GoalSpec, cost: np.ndarray | None = None,
              config: SolverConfig = SolverConfig()) -> ScalarField:
    """Arrival-time field solving ``|grad V| = c`` on the safe set, ``V(goal) = 0``.

    ``cost`` defaults to 1 on every safe cell. Obstacles and cells not
    reachable from the goal get ``config.obstacle_value``.
    """
    goal.validate(grid)
    safe = grid.cells
    if cost is None:
        cost = np.ones(grid.shape)
    else:
        cost = np.asarray(cost, dtype=float)
        if cost.shape != grid.shape or (cost[safe] <= 0).any():
            raise ValueError("cost must match the grid and be positive on safe cells")
    V = np.full(grid.shape, INF)
    state = np.zeros(grid.shape, dtype=np.int8)
    V[goal.row, goal.col] = 0.0
    heap = [(0.0, goal.row, goal.col)]
    _march(V, state, safe, cost, grid.cell_size, heap)
    V[~np.isfinite(V)] = config.obstacle_value
    return ScalarField(V, grid.cell_size, "value")


def _interface_seeds(grid: OccupancyGrid):
    """Cells 4-adjacent to a safe/obstacle edge, on each side.

    Off-grid counts as obstacle, so the map border bounds the safe set.
    """
    safe = grid.cells
    p = np.pad(safe, 1, constant_values=False)
    H, W = safe.shape
    touches_obst = np.zeros_like(safe)
    touches_safe = np.zeros_like(safe)
    for di, dj in _N4:
        nb = p[1 + di:1 + di + H, 1 + dj:1 + dj + W]
        touches_obst |= ~nb
        touches_safe |= nb
    return safe & touches_obst, ~safe & touches_safe


def fmm_sdf(grid: OccupancyGrid) -> ScalarField:
    """Signed distance to the safe-set boundary: positive in S, negative outside.

    The zero level set sits on edges shared by a safe cell and an obstacle (or
    the map border); cells touching such an edge start at half a cell and two
    marches spread the distance into the safe and obstacle regions.
    """
    h = grid.cell_size
    safe = grid.cells
    pos_seed, neg_seed = _interface_seeds(grid)
    out = np.zeros(grid.shape)
    cost = np.ones(grid.shape)
    for region, seeds, sign in ((safe, pos_seed, 1.0), (~safe, neg_seed, -1.0)):
        if not region.any():
            continue
        V = np.full(grid.shape, INF)
        state = np.zeros(grid.shape, dtype=np.int8)
        heap = []
        for i, j in np.argwhere(seeds):
            V[i, j] = 0.5 * h
            state[i, j] = _TRIAL
            heap.append((0.5 * h, int(i), int(j)))
        heapq.heapify(heap)
        _march(V, state, region, cost, h, heap)
        out[region] = sign * V[region]
    return ScalarField(out, h, "sdf")


def interface_midpoints(grid: OccupancyGrid) -> np.ndarray:
    """Midpoints of every safe/obstacle (or safe/border) cell edge, ``(n, 2)``."""
    h = grid.cell_size
    safe = grid.cells
    H, W = safe.shape
    pts = []
    p = np.pad(safe, 1, constant_values=False)
    for di, dj in _N4:
        nb = p[1 + di:1 + di + H, 1 + dj:1 + dj + W]
        idx = np.argwhere(safe & ~nb)
        if len(idx):
            pts.append((idx + 0.5 + 0.5 * np.array([di, dj])) * h)
    return np.concatenate(pts) if pts else np.zeros((0, 2))


def brute_force_sdf(grid: OccupancyGrid) -> ScalarField:
    """Exhaustive signed distance from every cell center to the nearest interface midpoint."""
    h = grid.cell_size
    mids = interface_midpoints(grid)
    rows, cols = np.indices(grid.shape)
    centers = (np.stack([rows.ravel(), cols.ravel()], axis=1) + 0.5) * h
    best = np.full(len(centers), INF)
    for start in range(0, len(mids), 512):
        chunk = mids[start:start + 512]
        d = np.sqrt(((centers[:, None, :] - chunk[None, :, :]) ** 2).sum(-1)).min(axis=1)
        best = np.minimum(best, d)
    sign = np.where(grid.cells.ravel(), 1.0, -1.0)
    return ScalarField((sign * best).reshape(grid.shape), h, "sdf")


def dijkstra_value(grid: OccupancyGrid, goal: GoalSpec,
                   config: SolverConfig = SolverConfig(), tie_break: str = "index") -> ScalarField:
    """Exact lattice cost-to-go with axis steps ``h`` and diagonal steps ``sqrt(2) h``.

    Diagonal moves need both orthogonal neighbours safe. Costs are tracked as
    integer (axis, diagonal) step counts so the field does not depend on the
    order in which equal-cost paths are discovered; ``tie_break`` ("index" or
    "reverse") only changes that order.
    """
    goal.validate(grid)
    if tie_break not in ("index", "reverse"):
        raise ValueError("tie_break must be 'index' or 'reverse'")
    safe = grid.cells
    H, W = safe.shape
    moves = _N4 if config.connectivity == 4 else _N8
    sgn = 1 if tie_break == "index" else -1
    n_ax = np.full(grid.shape, -1, dtype=np.int64)
    n_dg = np.zeros(grid.shape, dtype=np.int64)
    dist = np.full(grid.shape, INF)
    done = np.zeros(grid.shape, dtype=bool)
    gi, gj = goal.row, goal.col
    n_ax[gi, gj] = 0
    dist[gi, gj] = 0.0
    heap = [(0.0, sgn * (gi * W + gj), gi, gj)]
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        d, _, i, j = pop(heap)
        if done[i, j]:
            continue
        done[i, j] = True
        a0, b0 = n_ax[i, j], n_dg[i, j]
        for di, dj in moves:
            ni, nj = i + di, j + dj
            if not (0 <= ni < H and 0 <= nj < W) or not safe[ni, nj] or done[ni, nj]:
                continue
            if di and dj:
                if not (safe[i + di, j] and safe[i, j + dj]):
                    continue
                a, b = a0, b0 + 1
            else:
                a, b = a0 + 1, b0
            cand = a + b * SQRT2
            if cand < dist[ni, nj]:
                dist[ni, nj] = cand
                n_ax[ni, nj], n_dg[ni, nj] = a, b
                push(heap, (cand, sgn * (ni * W + nj), ni, nj))
    h = grid.cell_size
    reached = n_ax >= 0
    V = np.full(grid.shape, config.obstacle_value, dtype=float)
    V[reached] = h * (n_ax[reached] + n_dg[reached] * SQRT2)
    return ScalarField(V, h, "value")


def octile_distance(a, b, cell_size: float) -> float:
    """``max*h + (sqrt2 - 1)*min*h``, evaluated as axis plus diagonal step counts
    so it rounds exactly like the lattice solver."""
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return cell_size * ((max(dr, dc) - min(dr, dc)) + min(dr, dc) * SQRT2)


def lattice_edges(grid: OccupancyGrid, connectivity: int = 8):
    """Yield ``((i, j), (k, l), weight)`` for every directed lattice edge."""
    safe = grid.cells
    H, W = safe.shape
    h = grid.cell_size
    moves = _N4 if connectivity == 4 else _N8
    for i, j in np.argwhere(safe):
        for di, dj in moves:
            ni, nj = i + di, j + dj
            if not (0 <= ni < H and 0 <= nj < W) or not safe[ni, nj]:
                continue
            if di and dj:
                if not (safe[i + di, j] and safe[i, j + dj]):
                    continue
                yield (int(i), int(j)), (int(ni), int(nj)), SQRT2 * h
            else:
                yield (int(i), int(j)), (int(ni), int(nj)), h
