"""Planners on occupancy grids: value-gradient descent, A*, RRT and RRT*.

Points are ``(row_coord, col_coord)`` in normalized units; cells are
``(row, col)`` index pairs.
"""

from __future__ import annotations

import csv
import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .eikonal import SQRT2, dijkstra_value
from .grid import GoalSpec, OccupancyGrid, ScalarField, erode
from .numerics import bilinear, central_gradient


@dataclass
class Path:
    waypoints: np.ndarray  # (n, 2)

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)

    @property
    def length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())

    def __len__(self):
        return len(self.waypoints)


@dataclass
class PlanStats:
    nodes_expanded: int = 0
    path_length: float = math.inf
    epsilon_estimate: float = math.nan
    wall_time: float = 0.0
    success: bool = False
    reason: str = ""


@dataclass
class Heuristic:
    """Per-cell heuristic table."""

    values: np.ndarray
    label: str

    def __post_init__(self):
        if self.label not in ("zero", "euclidean", "pno", "pno-eroded", "max-combined", "oracle"):
            raise ValueError(f"unknown heuristic label {self.label!r}")

    def __call__(self, cell) -> float:
        return float(self.values[cell[0], cell[1]])


def euclidean_heuristic(grid: OccupancyGrid, goal) -> Heuristic:
    r, c = np.indices(grid.shape)
    d = grid.cell_size * np.hypot(r - goal[0], c - goal[1])
    return Heuristic(d, "euclidean")


def zero_heuristic(grid: OccupancyGrid) -> Heuristic:
    return Heuristic(np.zeros(grid.shape), "zero")


def _cell(x) -> tuple[int, int]:
    if isinstance(x, GoalSpec):
        return x.row, x.col
    return int(x[0]), int(x[1])


def _check_endpoints(grid, start, goal):
    for name, p in (("start", start), ("goal", goal)):
        if not grid.is_safe(*p):
            raise ValueError(f"{name} {p} is not a safe cell")


# --------------------------------------------------------------------------

def gradient_descent_plan(value: ScalarField, start, step: float | None = None, max_iters: int = 10000,
                          grid: OccupancyGrid | None = None, goal=None) -> tuple[Path, PlanStats]:
    """Follow ``-grad V`` from the continuous point ``start``.

    The goal is the cell where ``V`` is smallest unless given. Obstacles are the
    cells of ``grid`` (or the non-finite entries of ``value``).
    """
    t0 = time.perf_counter()
    h = value.cell_size
    step = 0.5 * h if step is None else step
    V = np.asarray(value.values, dtype=float)
    safe = grid.cells if grid is not None else np.isfinite(V)
    gx, gy = central_gradient(value, safe)
    Vf = np.where(safe & np.isfinite(V), V, np.nanmax(np.where(np.isfinite(V), V, np.nan)) * 2 + 1)
    g = _cell(goal) if goal is not None else np.unravel_index(int(np.argmin(np.where(safe, V, np.inf))), V.shape)
    gp = (np.array(g, dtype=float) + 0.5) * h
    x = np.asarray(start, dtype=float)

    def inside(p):
        r, c = int(np.floor(p[0] / h)), int(np.floor(p[1] / h))
        return 0 <= p[0] and 0 <= p[1] and r < V.shape[0] and c < V.shape[1] and safe[r, c]

    if not inside(x):
        raise ValueError("start lies in an obstacle or off the map")
    pts = [x.copy()]
    stats = PlanStats()
    for it in range(max_iters):
        if np.linalg.norm(x - gp) <= h and _segment_free_mask(safe, h, x, gp):
            # final approach in pieces no longer than ``step``
            k = int(np.ceil(np.linalg.norm(gp - x) / step))
            pts.extend(x + (gp - x) * (t / k) for t in range(1, k + 1))
            stats.success = True
            break
        d = np.array([bilinear(gy.values, x, h), bilinear(gx.values, x, h)])
        n = np.linalg.norm(d)
        if n < 1e-8:
            stats.reason = "vanishing gradient"
            break
        nxt = x - step * d / n
        if not (inside(nxt) and _segment_free_mask(safe, h, x, nxt)):
            # slide along the wall: keep whichever single-axis component stays safe
            cands = [x - step * np.sign(d) * e for e in (np.array([1.0, 0.0]), np.array([0.0, 1.0]))
                     if abs(d @ e) > 1e-12 * n]
            cands = [c for c in cands if inside(c) and _segment_free_mask(safe, h, x, c)]
            if not cands:
                stats.reason = "entered obstacle"
                break
            nxt = min(cands, key=lambda c: bilinear(Vf, c, h))
        x = nxt
        pts.append(x.copy())
        stats.nodes_expanded = it + 1
    else:
        stats.reason = "max_iters"
    path = Path(np.array(pts))
    stats.path_length = path.length if stats.success else math.inf
    stats.wall_time = time.perf_counter() - t0
    return path, stats


# --------------------------------------------------------------------------

_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


def astar(grid: OccupancyGrid, start, goal, heuristic: Heuristic | None = None,
          connectivity: int = 8) -> tuple[Path, PlanStats]:
    """A* on the lattice used by :func:`dijkstra_value` (no corner cutting).

    Open-list ties on ``f`` go to the larger ``g``, then the smaller row-major
    index. Closed nodes are never reopened, so an inconsistent heuristic can
    return a suboptimal path. ``nodes_expanded`` counts pops of open nodes.
    """
    t0 = time.perf_counter()
    start, goal = _cell(start), _cell(goal)
    _check_endpoints(grid, start, goal)
    hv = np.zeros(grid.shape) if heuristic is None else np.asarray(heuristic.values, dtype=float)
    safe = grid.cells
    H, W = safe.shape
    h = grid.cell_size
    moves = _MOVES[:4] if connectivity == 4 else _MOVES
    g = np.full(H * W, math.inf)
    steps = np.zeros((H * W, 2), dtype=np.int64)  # (axis, diagonal) counts
    parent = np.full(H * W, -1, dtype=np.int64)
    closed = np.zeros(H * W, dtype=bool)
    s = start[0] * W + start[1]
    gi = goal[0] * W + goal[1]
    g[s] = 0.0
    heap = [(hv[start], -0.0, s)]
    pop, push = heapq.heappop, heapq.heappush
    expanded = 0
    while heap:
        _, ng, u = pop(heap)
        if closed[u] or -ng > g[u]:
            continue
        closed[u] = True
        expanded += 1
        if u == gi:
            break
        i, j = divmod(u, W)
        a0, b0 = steps[u]
        for di, dj in moves:
            ni, nj = i + di, j + dj
            if not (0 <= ni < H and 0 <= nj < W) or not safe[ni, nj]:
                continue
            v = ni * W + nj
            if closed[v]:
                continue
            if di and dj:
                if not (safe[i + di, j] and safe[i, j + dj]):
                    continue
                a, b = a0, b0 + 1
            else:
                a, b = a0 + 1, b0
            cand = h * (a + b * SQRT2)
            if cand < g[v]:
                g[v] = cand
                steps[v] = a, b
                parent[v] = u
                push(heap, (cand + hv[ni, nj], -cand, v))
    stats = PlanStats(nodes_expanded=expanded)
    if not closed[gi]:
        stats.reason = "no path"
        stats.wall_time = time.perf_counter() - t0
        return Path(np.zeros((0, 2))), stats
    cells = [gi]
    while cells[-1] != s:
        cells.append(int(parent[cells[-1]]))
    cells.reverse()
    rc = np.array([divmod(c, W) for c in cells], dtype=float)
    stats.success = True
    stats.path_length = float(g[gi])
    stats.wall_time = time.perf_counter() - t0
    return Path((rc + 0.5) * h), stats


# --------------------------------------------------------------------------

def pno_value_field(model, grid: OccupancyGrid, goal, features=None) -> np.ndarray:
    from .operator.model import pno_forward
    return pno_forward(model, grid, GoalSpec(*_cell(goal)), features=features).values


def combine_heuristic(grid: OccupancyGrid, goal, learned: np.ndarray, label: str) -> Heuristic:
    """``max{||x - g||, learned(x)}`` with the goal clamped to 0."""
    goal = _cell(goal)
    vals = np.maximum(euclidean_heuristic(grid, goal).values, np.nan_to_num(learned, posinf=0.0))
    vals[goal] = 0.0
    return Heuristic(vals, label)


def make_pno_heuristic(model, grid: OccupancyGrid, goal, erosion_layers: int = 0,
                       features=None) -> Heuristic:
    """PNO value on the eroded map, combined with the Euclidean norm.

    ``features`` may carry the feature field of ``erode(grid, erosion_layers)``
    to reuse it across goals.
    """
    goal = _cell(goal)
    _check_endpoints(grid, goal, goal)
    eroded = erode(grid, erosion_layers)
    learned = pno_value_field(model, eroded, goal, features)
    return combine_heuristic(grid, goal, learned, "pno-eroded" if erosion_layers > 0 else "pno")


def default_erosion(height: int) -> int:
    return int(round(12 * height / 256))


# --------------------------------------------------------------------------
# sampling planners

def supercover_cells(p0, p1, cell_size: float) -> list[tuple[int, int]]:
    """Every cell the closed segment ``p0 -> p1`` touches, corners included."""
    r0, c0 = p0[0] / cell_size, p0[1] / cell_size
    r1, c1 = p1[0] / cell_size, p1[1] / cell_size
    i, j = math.floor(r0), math.floor(c0)
    ie, je = math.floor(r1), math.floor(c1)
    dr, dc = r1 - r0, c1 - c0
    si = 1 if dr > 0 else -1
    sj = 1 if dc > 0 else -1
    t_dr = abs(1.0 / dr) if dr else math.inf
    t_dc = abs(1.0 / dc) if dc else math.inf
    tr = ((i + 1 - r0) if dr > 0 else (r0 - i)) * t_dr if dr else math.inf
    tc = ((j + 1 - c0) if dc > 0 else (c0 - j)) * t_dc if dc else math.inf
    cells = [(i, j)]
    n = abs(ie - i) + abs(je - j)
    while (i, j) != (ie, je) and n > 0:
        if abs(tr - tc) < 1e-12:
            if tr > 1.0:
                break
            cells.append((i + si, j))
            cells.append((i, j + sj))
            i += si
            j += sj
            tr += t_dr
            tc += t_dc
            n -= 2
        elif tr < tc:
            if tr > 1.0:
                break
            i += si
            tr += t_dr
            n -= 1
        else:
            if tc > 1.0:
                break
            j += sj
            tc += t_dc
            n -= 1
        cells.append((i, j))
    return cells


def segment_free(grid: OccupancyGrid, p0, p1) -> bool:
    return _segment_free_mask(grid.cells, grid.cell_size, p0, p1)


def _segment_free_mask(safe: np.ndarray, cell_size: float, p0, p1) -> bool:
    H, W = safe.shape
    for i, j in supercover_cells(p0, p1, cell_size):
        if not (0 <= i < H and 0 <= j < W) or not safe[i, j]:
            return False
    return True


@dataclass
class RrtParams:
    step: float | None = None        # default 4 * cell_size
    goal_bias: float = 0.05
    max_samples: int = 20000
    seed: int = 0
    gamma: float | None = None       # RRT* radius constant, default 1.5 * domain diagonal


class _Tree:
    def __init__(self, root, capacity):
        self.pts = np.zeros((capacity + 2, 2))
        self.pts[0] = root
        self.parent = [-1]
        self.cost = [0.0]
        self.children = [[]]
        self.n = 1

    def add(self, p, parent, cost):
        k = self.n
        self.pts[k] = p
        self.parent.append(parent)
        self.cost.append(cost)
        self.children.append([])
        if parent >= 0:
            self.children[parent].append(k)
        self.n += 1
        return k

    def nearest(self, p) -> int:
        d = ((self.pts[:self.n] - p) ** 2).sum(axis=1)
        return int(np.argmin(d))

    def near(self, p, r) -> np.ndarray:
        d = ((self.pts[:self.n] - p) ** 2).sum(axis=1)
        return np.flatnonzero(d <= r * r)

    def path_to(self, k) -> np.ndarray:
        out = []
        while k >= 0:
            out.append(self.pts[k])
            k = self.parent[k]
        return np.array(out[::-1])

    def reparent(self, k, new_parent, new_cost):
        old = self.parent[k]
        self.children[old].remove(k)
        self.children[new_parent].append(k)
        self.parent[k] = new_parent
        delta = new_cost - self.cost[k]
        stack = [k]
        while stack:
            u = stack.pop()
            self.cost[u] += delta
            stack.extend(self.children[u])


def _steer(a, b, step):
    d = b - a
    n = math.hypot(d[0], d[1])
    return b.copy() if n <= step else a + d * (step / n)


def _rrt_core(grid: OccupancyGrid, start, goal, params: RrtParams, star: bool):
    t0 = time.perf_counter()
    start, goal = _cell(start), _cell(goal)
    _check_endpoints(grid, start, goal)
    h = grid.cell_size
    step = 4 * h if params.step is None else params.step
    ext = np.array([grid.height * h, grid.width * h])
    gamma = 1.5 * float(np.hypot(*ext)) if params.gamma is None else params.gamma
    sp, gp = grid.center(*start), grid.center(*goal)
    stats = PlanStats()
    if start == goal:
        stats.success, stats.path_length = True, 0.0
        stats.wall_time = time.perf_counter() - t0
        return Path(sp[None]), stats
    rng = np.random.default_rng(params.seed)
    tree = _Tree(sp, params.max_samples)
    best, best_cost = -1, math.inf
    goal_links = []  # nodes within one step of the goal with a free segment
    for it in range(params.max_samples):
        u = rng.random(3)
        q = gp.copy() if u[0] < params.goal_bias else u[1:] * ext
        near_i = tree.nearest(q)
        new = _steer(tree.pts[near_i], q, step)
        if not grid.point_is_safe(new) or not segment_free(grid, tree.pts[near_i], new):
            continue
        parent = near_i
        cost = tree.cost[near_i] + float(np.linalg.norm(new - tree.pts[near_i]))
        nbrs = ()
        if star:
            n = tree.n + 1
            r = gamma * math.sqrt(math.log(n) / n)
            nbrs = tree.near(new, r)
            for k in nbrs:
                c = tree.cost[k] + float(np.linalg.norm(new - tree.pts[k]))
                if c < cost - 1e-12 and segment_free(grid, tree.pts[k], new):
                    parent, cost = int(k), c
        k_new = tree.add(new, parent, cost)
        if star:
            for k in nbrs:
                c = cost + float(np.linalg.norm(new - tree.pts[k]))
                if c < tree.cost[k] - 1e-12 and segment_free(grid, new, tree.pts[k]):
                    tree.reparent(int(k), k_new, c)
        if np.linalg.norm(new - gp) <= step + 1e-12 and segment_free(grid, new, gp):
            goal_links.append(k_new)
            if not star:
                best = k_new
                break
        if star and goal_links:
            costs = [tree.cost[k] + float(np.linalg.norm(tree.pts[k] - gp)) for k in goal_links]
            j = int(np.argmin(costs))
            if costs[j] < best_cost:
                best, best_cost = goal_links[j], costs[j]
    stats.nodes_expanded = tree.n
    if best < 0:
        stats.reason = "max_samples"
        stats.wall_time = time.perf_counter() - t0
        return Path(np.zeros((0, 2))), stats
    pts = tree.path_to(best)
    if not np.array_equal(pts[-1], gp):
        pts = np.vstack([pts, gp])
    path = Path(pts)
    stats.success = True
    stats.path_length = path.length
    stats.wall_time = time.perf_counter() - t0
    return path, stats


def rrt(grid: OccupancyGrid, start, goal, params: RrtParams = RrtParams()) -> tuple[Path, PlanStats]:
    """Goal-biased RRT; stops at the first connection to the goal."""
    return _rrt_core(grid, start, goal, params, star=False)


def rrt_star(grid: OccupancyGrid, start, goal, params: RrtParams = RrtParams()) -> tuple[Path, PlanStats]:
    """RRT* with choose-parent and rewiring inside ``gamma * sqrt(log n / n)``.

    Uses all ``max_samples`` iterations and returns the cheapest goal connection.
    With the same seed the tree vertices coincide with :func:`rrt`'s, so the
    returned cost never exceeds RRT's.
    """
    return _rrt_core(grid, start, goal, params, star=True)


# --------------------------------------------------------------------------

def epsilon_estimate(path_length, grid: OccupancyGrid, start, goal, oracle: np.ndarray | None = None) -> float:
    """Path length over the lattice-optimal length from ``start`` to ``goal``."""
    start, goal = _cell(start), _cell(goal)
    if isinstance(path_length, Path):
        path_length = path_length.length
    V = dijkstra_value(grid, GoalSpec(*goal)).values if oracle is None else oracle
    opt = V[start]
    if not np.isfinite(opt):
        raise ValueError("start is not reachable from goal")
    if opt == 0.0:
        return 1.0 if path_length == 0.0 else math.inf
    return float(path_length / opt)


CSV_FIELDS = ("map_id", "planner", "heuristic", "erosion", "path_length", "epsilon",
              "nodes_expanded", "wall_time_s", "success")


def stats_row(map_id, planner: str, heuristic: str, erosion: int, stats: PlanStats) -> dict:
    return {
        "map_id": map_id, "planner": planner, "heuristic": heuristic, "erosion": erosion,
        "path_length": f"{stats.path_length:.12g}", "epsilon": f"{stats.epsilon_estimate:.12g}",
        "nodes_expanded": stats.nodes_expanded, "wall_time_s": f"{stats.wall_time:.6f}",
        "success": int(stats.success),
    }


def write_stats_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
