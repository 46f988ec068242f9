"""Empirical checks of heuristic consistency and of the head's triangle inequality.

``V(x, y)`` is always the lattice metric of :func:`dijkstra_value`, the same
graph A* searches, so the measured quantities are exact for that graph.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .eikonal import dijkstra_value
from .grid import GoalSpec, OccupancyGrid, erode
from .planner import Heuristic, make_pno_heuristic

_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass
class ConsistencyReport:
    """Measured consistency of one heuristic on one map.

    ``eps_NO_measured`` is the largest ``|h - V(., g)|`` over the sampled
    points (not a bound over all inputs). ``eps_lemma_bound`` is
    ``1 + 2 eps_NO / min V(x, y)``. ``consistency_violations`` counts pairs with
    ``h(x) - h(y) > V(x, y) + 1e-6``.
    """

    eps_NO_measured: float
    eps_lemma_bound: float
    eps_empirical: float
    consistency_violations: int
    admissibility_violation_rate: float
    pairs: int
    skipped: int
    label: str = ""
    erosion: int = 0

    @property
    def bound_holds(self) -> bool:
        return self.eps_empirical <= self.eps_lemma_bound + 1e-6


def _successor(V: np.ndarray, safe: np.ndarray, cell, h: float):
    """A neighbour of ``cell`` on an optimal lattice path toward the goal of ``V``."""
    H, W = V.shape
    i, j = cell
    best, arg = math.inf, None
    for di, dj in _MOVES:
        ni, nj = i + di, j + dj
        if not (0 <= ni < H and 0 <= nj < W) or not safe[ni, nj]:
            continue
        if di and dj:
            if not (safe[i + di, j] and safe[i, j + dj]):
                continue
            w = math.sqrt(2.0) * h
        else:
            w = h
        c = w + V[ni, nj]
        if c < best - 1e-12:
            best, arg = c, (ni, nj)
    return arg


def measure_epsilon_consistency(heuristic: Heuristic, grid: OccupancyGrid, goal, sample_pairs: int = 200,
                                seed: int = 0, oracle_grid: OccupancyGrid | None = None,
                                per_source: int = 20) -> ConsistencyReport:
    """Sample safe pairs ``(x, y)`` and measure ``max (h(x) - h(y)) / V(x, y)``.

    Pairs are grouped by source ``x`` (one lattice solve per source). Each
    source also contributes the pair with its optimal successor toward the
    goal, the tightest local consistency constraint. ``eps_NO`` is measured
    against the cost-to-go on ``oracle_grid`` (the map the heuristic was built
    from, e.g. an eroded one), defaulting to ``grid``.
    """
    g = GoalSpec(goal.row, goal.col) if isinstance(goal, GoalSpec) else GoalSpec(int(goal[0]), int(goal[1]))
    rng = np.random.default_rng(seed)
    h = grid.cell_size
    Vg = dijkstra_value(grid, g).values
    Vo = Vg if oracle_grid is None else dijkstra_value(oracle_grid, g).values
    hv = np.asarray(heuristic.values, dtype=float)
    safe = grid.cells
    reach = np.isfinite(Vg)
    cells = np.argwhere(reach)
    n_src = max(1, math.ceil(sample_pairs / per_source))
    srcs = cells[rng.choice(len(cells), size=min(n_src, len(cells)), replace=False)]
    ratios, vxy, skipped, points = [], [], 0, set()
    viol = 0
    for x in map(tuple, srcs):
        Vx = dijkstra_value(grid, GoalSpec(*x)).values
        ys = [tuple(c) for c in cells[rng.integers(0, len(cells), size=per_source)]]
        succ = _successor(Vg, safe, x, h)
        if succ is not None and Vg[x] > 0:
            ys.append(succ)
        for y in ys:
            if y == x:
                continue
            d = Vx[y]
            if not np.isfinite(d):
                skipped += 1
                continue
            diff = hv[x] - hv[y]
            ratios.append(diff / d)
            vxy.append(d)
            viol += int(diff > d + 1e-6)
            points.update((x, y))
    pts = np.array(sorted(points)) if points else np.zeros((0, 2), dtype=int)
    finite = np.isfinite(Vo[pts[:, 0], pts[:, 1]]) if len(pts) else np.zeros(0, dtype=bool)
    pts = pts[finite]
    eps_no = float(np.abs(hv[pts[:, 0], pts[:, 1]] - Vo[pts[:, 0], pts[:, 1]]).max()) if len(pts) else 0.0
    min_v = min(vxy) if vxy else math.inf
    both = reach & np.isfinite(hv)
    adm = float((hv[both] > Vg[both] + 1e-6).mean()) if both.any() else 0.0
    return ConsistencyReport(
        eps_NO_measured=eps_no,
        eps_lemma_bound=1.0 + 2.0 * eps_no / min_v,
        eps_empirical=float(max(ratios)) if ratios else math.nan,
        consistency_violations=viol,
        admissibility_violation_rate=adm,
        pairs=len(ratios),
        skipped=skipped,
        label=heuristic.label,
    )


@dataclass
class ErosionComparison:
    reports: list[ConsistencyReport]
    layers: list[int]
    bound_ordering: list[bool] = field(default_factory=list)      # bound(L_k+1) <= bound(L_k)
    empirical_ordering: list[bool] = field(default_factory=list)  # eps(L_k+1) <= eps(L_k)


def compare_erosion_consistency(model, grid: OccupancyGrid, goal, layer_list, samples: int = 200,
                                seed: int = 0) -> ErosionComparison:
    """Consistency of the PNO heuristic at each erosion level on identical pairs.

    Each level's ``eps_NO`` is measured against the value function of the
    eroded map it was built from.
    """
    goal = GoalSpec(goal.row, goal.col) if isinstance(goal, GoalSpec) else GoalSpec(int(goal[0]), int(goal[1]))
    reports = []
    for L in layer_list:
        heur = make_pno_heuristic(model, grid, goal, L)
        r = measure_epsilon_consistency(heur, grid, goal, samples, seed, oracle_grid=erode(grid, L))
        r.erosion = int(L)
        reports.append(r)
    out = ErosionComparison(reports, list(layer_list))
    for a, b in zip(reports, reports[1:]):
        out.bound_ordering.append(b.eps_lemma_bound <= a.eps_lemma_bound + 1e-12)
        out.empirical_ordering.append(b.eps_empirical <= a.eps_empirical + 1e-12)
    return out


def check_triangle(model, grid: OccupancyGrid, triples: int = 10000, seed: int = 0,
                   features: np.ndarray | None = None, tol: float = 1e-6) -> tuple[int, float]:
    """Count ``Q(x, g) > Q(x, y) + Q(y, g) + tol`` over random safe triples.

    ``Q(a, b) = f(F(a) - F(b))`` with the map's shared feature field ``F``. The
    first triple is the degenerate ``x = y = g``. Returns ``(violations,
    max violation)``; the max is ``0`` or negative when none occur.
    """
    F = model.feature_field(grid) if features is None else features
    F = np.asarray(F, dtype=np.float64)
    rng = np.random.default_rng(seed)
    cells = np.argwhere(grid.cells)
    idx = rng.integers(0, len(cells), size=(triples, 3))
    idx[0] = idx[0, 0]
    fx, fy, fg = (F[cells[idx[:, k], 0], cells[idx[:, k], 1]] for k in range(3))
    head = model.head
    saved = {k: v for k, v in head.params.items()}
    head.params = {k: np.asarray(v, dtype=np.float64) for k, v in saved.items()}
    try:
        q = lambda u: head.forward(u)[0]
        gap = q(fx - fg) - (q(fx - fy) + q(fy - fg))
    finally:
        head.params = saved
    return int((gap > tol).sum()), float(gap.max())


# --------------------------------------------------------------------------

REPORT_FIELDS = ("map_id", "label", "erosion", "eps_NO_measured", "eps_lemma_bound", "eps_empirical",
                 "bound_holds", "consistency_violations", "admissibility_violation_rate", "pairs", "skipped")


def write_reports_csv(path, rows: list[tuple[object, ConsistencyReport]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for map_id, r in rows:
            d = asdict(r)
            d = {k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in d.items()}
            w.writerow({"map_id": map_id, "bound_holds": int(r.bound_holds), **d})


def summarize(rows: list[tuple[object, ConsistencyReport]]) -> str:
    lines = []
    for map_id, r in rows:
        lines.append(
            f"map {map_id} [{r.label}, erosion {r.erosion}]: eps_empirical={r.eps_empirical:.4f} "
            f"bound={r.eps_lemma_bound:.4f} ({'holds' if r.bound_holds else 'VIOLATED'}), "
            f"measured eps_NO={r.eps_NO_measured:.4g}, consistency violations={r.consistency_violations}/{r.pairs}, "
            f"inadmissible cells={100 * r.admissibility_violation_rate:.1f}%")
    held = sum(r.bound_holds for _, r in rows)
    lines.append(f"consistency bound holds on {held}/{len(rows)} reports")
    return "\n".join(lines) + "\n"
