import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnoplan.eikonal import (
    SQRT2, SolverConfig, brute_force_sdf, dijkstra_value, fmm_sdf, fmm_value,
    interface_midpoints, lattice_edges, octile_distance,
)
from pnoplan.grid import GoalSpec, MapParams, OccupancyGrid, generate_random_map


def _bellman_ford(grid, goal, connectivity=8):
    # independent oracle: relax every edge until nothing changes
    V = np.full(grid.shape, np.inf)
    V[goal.row, goal.col] = 0.0
    edges = list(lattice_edges(grid, connectivity))
    for _ in range(grid.cells.size):
        changed = False
        for (i, j), (k, l), w in edges:
            if V[k, l] + w < V[i, j] - 1e-15:
                V[i, j] = V[k, l] + w
                changed = True
        if not changed:
            break
    return V


def _random_maps(n, seed=0, lo=16, hi=64):
    rng = np.random.default_rng(seed)
    for i in range(n):
        s = int(rng.integers(lo, hi + 1))
        k = max(2, s // 4)
        yield generate_random_map(1000 + i, s, s, MapParams((2, 8), (2, k)))


@st.composite
def _map_and_goal(draw, max_side=14):
    h = draw(st.integers(3, max_side))
    w = draw(st.integers(3, max_side))
    bits = np.array(draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))).reshape(h, w)
    r, c = draw(st.integers(0, h - 1)), draw(st.integers(0, w - 1))
    bits[r, c] = True
    return OccupancyGrid(bits), GoalSpec(r, c)


# ---------------------------------------------------------------- fmm_value

def test_fmm_corridor_is_arc_length():
    g = OccupancyGrid(np.ones((2, 12), bool))
    V = fmm_value(g, GoalSpec(0, 0)).values
    np.testing.assert_allclose(V[0], np.arange(12) * g.cell_size, rtol=0, atol=1e-15)


def test_fmm_empty_map_close_to_euclidean():
    g = OccupancyGrid(np.ones((64, 64), bool))
    V = fmm_value(g, GoalSpec(32, 32)).values
    r, c = np.indices(g.shape)
    exact = np.hypot(r - 32, c - 32) * g.cell_size
    assert np.linalg.norm(V - exact) / np.linalg.norm(exact) <= 0.05


def test_fmm_obstacles_and_unreachable():
    cells = np.ones((6, 6), bool)
    cells[:, 3] = False
    g = OccupancyGrid(cells)
    V = fmm_value(g, GoalSpec(0, 0)).values
    assert np.all(np.isinf(V[:, 3:]))
    assert np.all(np.isfinite(V[:, :3]))
    assert V[0, 0] == 0.0
    with pytest.raises(ValueError):
        fmm_value(g, GoalSpec(0, 3))


def test_fmm_custom_obstacle_value():
    cells = np.ones((4, 4), bool)
    cells[1, 1] = False
    V = fmm_value(OccupancyGrid(cells), GoalSpec(0, 0), config=SolverConfig(obstacle_value=1e6)).values
    assert V[1, 1] == 1e6 and V.max() == 1e6
    assert np.sort(V.ravel())[-2] < 1e6


@settings(max_examples=40, deadline=None)
@given(_map_and_goal())
def test_fmm_lattice_bounds_and_dp(mg):
    grid, goal = mg
    h = grid.cell_size
    V = fmm_value(grid, goal).values
    D4 = dijkstra_value(grid, goal, SolverConfig(connectivity=4)).values
    fin = np.isfinite(D4)
    assert np.array_equal(np.isfinite(V), fin)
    assert np.all(V[fin] <= D4[fin] + 1e-9)
    # the continuous metric can be shorter than the 4-lattice one by up to sqrt(2)
    assert np.all(V[fin] >= D4[fin] / SQRT2 - 2 * h)
    for (i, j), (k, l), w in lattice_edges(grid, 4):
        if np.isfinite(V[k, l]):
            assert V[i, j] <= w + V[k, l] + 1e-12


def test_fmm_spec_lower_bound_fails_on_open_diagonal():
    # the stated "fmm >= dijkstra4 - 2h" is false far from the goal on open maps
    g = OccupancyGrid(np.ones((32, 32), bool))
    V = fmm_value(g, GoalSpec(0, 0)).values
    D4 = dijkstra_value(g, GoalSpec(0, 0), SolverConfig(connectivity=4)).values
    assert V[31, 31] < D4[31, 31] - 2 * g.cell_size


@settings(max_examples=25, deadline=None)
@given(_map_and_goal(10), st.floats(1.0, 3.0))
def test_fmm_comparison_principle(mg, lam):
    grid, goal = mg
    c1 = np.ones(grid.shape)
    c2 = np.where(np.arange(grid.cells.size).reshape(grid.shape) % 3 == 0, 2.0, 1.0)
    V1 = fmm_value(grid, goal, c1).values
    V2 = fmm_value(grid, goal, c2).values
    fin = np.isfinite(V1)
    assert np.all(V2[fin] >= V1[fin] - 1e-12)
    Vl = fmm_value(grid, goal, lam * c1).values
    np.testing.assert_allclose(Vl[fin], lam * V1[fin], rtol=1e-9, atol=1e-12)


def test_fmm_bad_cost():
    g = OccupancyGrid(np.ones((3, 3), bool))
    with pytest.raises(ValueError):
        fmm_value(g, GoalSpec(0, 0), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        fmm_value(g, GoalSpec(0, 0), np.ones((2, 3)))


# ---------------------------------------------------------------- SDF

def test_sdf_empty_map_center():
    g = OccupancyGrid(np.ones((32, 32), bool))
    d = fmm_sdf(g).values
    assert abs(d[16, 16] - 0.5) <= g.cell_size
    assert np.all(d > 0)
    assert np.all(brute_force_sdf(g).values > 0)


def test_sdf_adjacent_cells():
    g = generate_random_map(5, 32, 32)
    d = fmm_sdf(g).values
    h = g.cell_size
    p = np.pad(g.cells, 1, constant_values=False)
    adj = g.cells & ~(p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:])
    assert np.all((d[adj] > 0) & (d[adj] <= 1.5 * h))


def test_sdf_block_matches_brute_force():
    cells = np.ones((16, 16), bool)
    cells[6:10, 6:10] = False
    g = OccupancyGrid(cells)
    assert np.abs(fmm_sdf(g).values - brute_force_sdf(g).values).max() <= g.cell_size


def test_sdf_random_maps_match_brute_force():
    for g in _random_maps(10, seed=1, lo=16, hi=16):
        a, b = fmm_sdf(g).values, brute_force_sdf(g).values
        assert np.abs(a - b).max() <= g.cell_size
        assert np.array_equal(b > 0, g.cells)
        assert np.array_equal(a > 0, g.cells)


def test_interface_midpoints_single_cell():
    cells = np.zeros((3, 3), bool)
    cells[1, 1] = True
    pts = interface_midpoints(OccupancyGrid(cells)) * 3
    assert sorted(map(tuple, pts.round(9))) == [(1.0, 1.5), (1.5, 1.0), (1.5, 2.0), (2.0, 1.5)]


# ---------------------------------------------------------------- Dijkstra

def test_dijkstra_octile_on_empty():
    g = OccupancyGrid(np.ones((20, 13), bool))
    goal = GoalSpec(4, 9)
    V = dijkstra_value(g, goal).values
    for r in range(20):
        for c in range(13):
            assert V[r, c] == octile_distance((r, c), (4, 9), g.cell_size)


def test_dijkstra_3x3_corner():
    g = OccupancyGrid(np.ones((3, 3), bool))
    V = dijkstra_value(g, GoalSpec(1, 1)).values
    assert V[0, 0] == SQRT2 * g.cell_size


def test_dijkstra_wall_detour_matches_bellman_ford():
    cells = np.ones((8, 8), bool)
    cells[1:8, 4] = False
    cells[3, 1:4] = False
    g = OccupancyGrid(cells)
    goal = GoalSpec(7, 7)
    V = dijkstra_value(g, goal).values
    np.testing.assert_allclose(V, _bellman_ford(g, goal), rtol=1e-12)
    assert V[7, 0] > octile_distance((7, 0), (7, 7), g.cell_size)


def test_dijkstra_no_corner_cutting():
    cells = np.array([[1, 0], [0, 1]], bool)
    g = OccupancyGrid(cells)
    V = dijkstra_value(g, GoalSpec(0, 0)).values
    assert np.isinf(V[1, 1])
    with pytest.raises(ValueError):
        dijkstra_value(g, GoalSpec(0, 1))
    with pytest.raises(ValueError):
        SolverConfig(connectivity=6)


@settings(max_examples=40, deadline=None)
@given(_map_and_goal(9), st.sampled_from([4, 8]))
def test_dijkstra_exact_and_tie_independent(mg, conn):
    grid, goal = mg
    cfg = SolverConfig(connectivity=conn)
    V = dijkstra_value(grid, goal, cfg).values
    assert np.array_equal(V, dijkstra_value(grid, goal, cfg, tie_break="reverse").values)
    np.testing.assert_allclose(V, _bellman_ford(grid, goal, conn), rtol=1e-12)
    for (i, j), (k, l), w in lattice_edges(grid, conn):
        if np.isfinite(V[k, l]):
            assert V[i, j] <= w + V[k, l] + 1e-12


def test_octile_formula():
    assert octile_distance((0, 0), (3, 5), 1.0) == pytest.approx(5 + (math.sqrt(2) - 1) * 3)
