"""Occupancy grids, scalar fields and the map utilities built on them.

Coordinates are normalized so that the longer side of a map spans 1.0. A cell
``(r, c)`` has its center at ``((r + 0.5) * cell_size, (c + 0.5) * cell_size)``
and points are always ``(row_coord, col_coord)`` pairs in these units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

SAFE_CHARS = frozenset(".G")
OBSTACLE_CHARS = frozenset("@OTW")

FIELD_KINDS = ("cost", "reciprocal-cost", "value", "sdf", "indicator", "heuristic")


class MapFormatError(ValueError):
    """Raised for malformed MovingAI map text."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Binary map; ``cells[r, c]`` is True for safe cells."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=bool)
        if cells.ndim != 2:
            raise ValueError("cells must be a 2D array")
        if cells.shape[0] < 2 or cells.shape[1] < 2:
            raise ValueError(f"grid must be at least 2x2, got {cells.shape}")
        if not cells.any():
            raise ValueError("grid has no safe cell")
        object.__setattr__(self, "cells", _readonly(cells))

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def cell_size(self) -> float:
        return 1.0 / max(self.height, self.width)

    def is_safe(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width and bool(self.cells[row, col])

    def cell_of(self, point) -> tuple[int, int]:
        """Cell containing a continuous point (clamped to the grid)."""
        r = int(np.floor(point[0] / self.cell_size))
        c = int(np.floor(point[1] / self.cell_size))
        return min(max(r, 0), self.height - 1), min(max(c, 0), self.width - 1)

    def center(self, row: int, col: int) -> np.ndarray:
        return (np.array([row, col], dtype=float) + 0.5) * self.cell_size

    def point_is_safe(self, point) -> bool:
        h = self.cell_size
        if not (0.0 <= point[0] < self.height * h and 0.0 <= point[1] < self.width * h):
            return False
        return bool(self.cells[self.cell_of(point)])

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.cells, other.cells))

    def __hash__(self):
        return hash((self.shape, self.cells.tobytes()))

    def __repr__(self):
        return (f"OccupancyGrid({self.height}x{self.width}, "
                f"obstacles={int((~self.cells).sum())})")


@dataclass(frozen=True)
class GoalSpec:
    row: int
    col: int

    def validate(self, grid: OccupancyGrid) -> None:
        if not (0 <= self.row < grid.height and 0 <= self.col < grid.width):
            raise ValueError(f"goal {self.row, self.col} out of bounds for {grid.shape}")
        if not grid.cells[self.row, self.col]:
            raise ValueError(f"goal {self.row, self.col} lies in an obstacle")

    def point(self, grid: OccupancyGrid) -> np.ndarray:
        return grid.center(self.row, self.col)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Dense real field aligned with a grid.

    Obstacle / unreachable entries of value-like fields are ``+inf``.
    """

    values: np.ndarray
    cell_size: float
    kind: str

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("field values must be 2D")
        if self.kind == "indicator" and ((values < 0) | (values > 1)).any():
            raise ValueError("indicator values must lie in [0, 1]")
        if self.kind == "value":
            finite = values[np.isfinite(values)]
            if (finite < 0).any():
                raise ValueError("value fields must be nonnegative")
        object.__setattr__(self, "values", _readonly(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __getitem__(self, idx):
        return self.values[idx]


# --------------------------------------------------------------------------
# MovingAI text format

def load_movingai(text: str | Iterable[str]) -> OccupancyGrid:
    """Parse a MovingAI ``.map`` file body."""
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = [ln.rstrip("\r\n") for ln in text]
    header = {}
    i = 0
    for key in ("type", "height", "width"):
        if i >= len(lines):
            raise MapFormatError(f"missing '{key}' header line")
        parts = lines[i].split()
        if len(parts) != 2 or parts[0] != key:
            raise MapFormatError(f"expected '{key} <value>' on line {i + 1}, got {lines[i]!r}")
        header[key] = parts[1]
        i += 1
    if i >= len(lines) or lines[i].strip() != "map":
        raise MapFormatError("missing 'map' line")
    i += 1
    try:
        height, width = int(header["height"]), int(header["width"])
    except ValueError as exc:
        raise MapFormatError("height/width must be integers") from exc
    if height < 1 or width < 1:
        raise MapFormatError("height/width must be positive")
    rows = lines[i:i + height]
    if len(rows) != height:
        raise MapFormatError(f"expected {height} map rows, found {len(rows)}")
    cells = np.zeros((height, width), dtype=bool)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MapFormatError(f"row {r} has length {len(row)}, expected {width}")
        for c, ch in enumerate(row):
            if ch in SAFE_CHARS:
                cells[r, c] = True
            elif ch not in OBSTACLE_CHARS:
                raise MapFormatError(f"unknown cell character {ch!r} at ({r}, {c})")
    return OccupancyGrid(cells)


def dump_movingai(grid: OccupancyGrid, map_type: str = "octile") -> str:
    lines = [f"type {map_type}", f"height {grid.height}", f"width {grid.width}", "map"]
    table = np.array(["@", "."])
    for row in grid.cells:
        lines.append("".join(table[row.astype(int)]))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Synthetic maps

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood constants).

    ``next()`` advances the state by 0x9E3779B97F4A7C15 and returns the mixed
    64-bit output; ``randint(lo, hi)`` is inclusive and uses rejection sampling
    so results are identical across languages.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randint(self, lo: int, hi: int) -> int:
        if hi < lo:
            raise ValueError("empty range")
        span = hi - lo + 1
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            x = self.next()
            if x < limit:
                return lo + x % span

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits."""
        return (self.next() >> 11) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class MapParams:
    """Rectangle-obstacle generator settings (inclusive ranges, in cells)."""

    count_range: tuple[int, int] = (6, 12)
    size_range: tuple[int, int] = (4, 16)


def generate_random_map(seed: int, height: int, width: int,
                        params: MapParams = MapParams(),
                        goal: tuple[int, int] | None = None) -> OccupancyGrid:
    """Axis-aligned rectangles placed uniformly at random.

    For each obstacle the generator draws, in order: height, width, top row,
    left column. The ``goal`` cell (default: the grid center) is cleared after
    placement so the map always has a safe cell.
    """
    cmin, cmax = params.count_range
    smin, smax = params.size_range
    if cmin < 0 or cmax < cmin:
        raise ValueError(f"bad obstacle count range {params.count_range}")
    if smin < 1 or smax < smin:
        raise ValueError(f"bad obstacle size range {params.size_range}")
    if height < 2 or width < 2:
        raise ValueError("grid must be at least 2x2")
    if smax >= min(height, width):
        raise ValueError("obstacle sizes must be smaller than the grid")
    if goal is None:
        goal = (height // 2, width // 2)
    if not (0 <= goal[0] < height and 0 <= goal[1] < width):
        raise ValueError("designated goal cell out of bounds")

    rng = SplitMix64(seed)
    cells = np.ones((height, width), dtype=bool)
    for _ in range(rng.randint(cmin, cmax)):
        h = rng.randint(smin, smax)
        w = rng.randint(smin, smax)
        r = rng.randint(0, height - h)
        c = rng.randint(0, width - w)
        cells[r:r + h, c:c + w] = False
    cells[goal] = True
    return OccupancyGrid(cells)


# --------------------------------------------------------------------------
# Morphology and resampling

def erode(grid: OccupancyGrid, layers: int) -> OccupancyGrid:
    """Peel ``layers`` boundary layers off every obstacle (8-connectivity).

    An obstacle cell survives a pass only if all 8 neighbours are obstacles;
    off-grid neighbours count as safe, so obstacles touching the border erode
    from that side too.
    """
    if layers < 0:
        raise ValueError("layers must be nonnegative")
    obst = ~grid.cells
    for _ in range(layers):
        if not obst.any():
            break
        p = np.pad(obst, 1, constant_values=False)
        keep = obst.copy()
        H, W = obst.shape
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr or dc:
                    keep &= p[1 + dr:1 + dr + H, 1 + dc:1 + dc + W]
        obst = keep
    return OccupancyGrid(~obst)


def _overlap_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row i holds the fraction of output cell i covered by each input cell."""
    A = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * n_in / n_out, (i + 1) * n_in / n_out
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            A[i, j] = min(hi, j + 1) - max(lo, j)
    return A / A.sum(axis=1, keepdims=True)


def resample_average(grid: OccupancyGrid, new_height: int, new_width: int) -> OccupancyGrid:
    """Area-average the 0/1 occupancy image to a new size, then threshold.

    Output cells whose safe fraction is exactly 0.5 become obstacles.
    """
    if new_height < 2 or new_width < 2:
        raise ValueError("target dimensions must be at least 2")
    frac = _overlap_matrix(new_height, grid.height) @ grid.cells.astype(float) \
        @ _overlap_matrix(new_width, grid.width).T
    cells = frac > 0.5 + 1e-12
    if not cells.any():
        # keep the invariant; the single best-covered cell survives
        cells.flat[int(np.argmax(frac))] = True
    return OccupancyGrid(cells)


def upsample_goal(goal: GoalSpec, factor: int) -> GoalSpec:
    """Goal cell at ``factor`` times the resolution (cell whose center is closest)."""
    return GoalSpec(goal.row * factor + factor // 2, goal.col * factor + factor // 2)


def occupancy_channel(grid: OccupancyGrid) -> ScalarField:
    """``1/c(x)``: 1 on safe cells, 0 on obstacles."""
    return ScalarField(grid.cells.astype(float), grid.cell_size, "reciprocal-cost")


def coordinate_channels(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center coordinates ``(x, y) = (col, row)`` in normalized units."""
    h = 1.0 / max(height, width)
    ys = (np.arange(height) + 0.5) * h
    xs = (np.arange(width) + 0.5) * h
    return np.broadcast_to(xs[None, :], (height, width)), np.broadcast_to(ys[:, None], (height, width))


def safe_cells(grid: OccupancyGrid) -> np.ndarray:
    """``(n, 2)`` array of safe cell indices in row-major order."""
    return np.argwhere(grid.cells)
