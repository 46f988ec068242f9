"""Synthetic training sets on disk: generation, manifest and loading.

A dataset directory holds one ``EIKF`` file per field and ``manifest.csv``
with one row per (map, goal) sample::

    sample_id,split,map_seed,erosion,goal_index,goal_row,goal_col,occupancy,sdf,value,dijkstra

Map seeds come from a SplitMix64 stream started at the run seed; goals and
erosion depths are drawn from a second stream seeded by the map seed, so every
sample can be regenerated from its manifest row alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .eikonal import dijkstra_value, fmm_sdf, fmm_value
from .fileio import load_field, save_field
from .grid import GoalSpec, MapParams, OccupancyGrid, ScalarField, SplitMix64, erode, generate_random_map

MANIFEST_FIELDS = ("sample_id", "split", "map_seed", "erosion", "goal_index", "goal_row", "goal_col",
                   "occupancy", "sdf", "value", "dijkstra")

_GOAL_STREAM = 0x5DEECE66D


@dataclass(frozen=True)
class MapJob:
    sample_id: str
    split: str
    map_seed: int
    erosion: int
    size: int
    params: MapParams
    n_goals: int
    dijkstra: bool


def pick_goals(grid: OccupancyGrid, n: int, rng: SplitMix64) -> list[GoalSpec]:
    """``n`` distinct cells of the largest 4-connected safe component."""
    lab, k = ndimage.label(grid.cells)
    sizes = np.bincount(lab.ravel())[1:]
    comp = np.argwhere(lab == 1 + int(np.argmax(sizes)))
    if len(comp) < n:
        raise ValueError("not enough safe cells for the requested goals")
    chosen: list[int] = []
    while len(chosen) < n:
        i = rng.randint(0, len(comp) - 1)
        if i not in chosen:
            chosen.append(i)
    return [GoalSpec(int(comp[i, 0]), int(comp[i, 1])) for i in chosen]


def plan_jobs(seed: int, size: int, n_train: int, n_val: int, n_goals: int, params: MapParams,
              dijkstra: bool = False, erosion_range=(0, 0), eroded_copies: int = 0) -> list[MapJob]:
    stream = SplitMix64(seed)
    jobs = []
    for i in range(n_train + n_val):
        split = "train" if i < n_train else "val"
        map_seed = stream.next()
        jobs.append(MapJob(f"{split}{i:04d}", split, map_seed, 0, size, params, n_goals, dijkstra))
        if split == "train":
            erng = SplitMix64(map_seed ^ 0xE0E0E0E0)
            for k in range(eroded_copies):
                L = erng.randint(*erosion_range)
                jobs.append(MapJob(f"{split}{i:04d}e{k}", split, map_seed, L, size, params, n_goals, dijkstra))
    return jobs


def run_job(job: MapJob):
    """Compute every field of one map: ``(grid, sdf, goals, values, dijkstra values)``."""
    grid = generate_random_map(job.map_seed, job.size, job.size, job.params)
    if job.erosion:
        grid = erode(grid, job.erosion)
    goals = pick_goals(grid, job.n_goals, SplitMix64(job.map_seed ^ _GOAL_STREAM ^ job.erosion))
    values = [fmm_value(grid, g) for g in goals]
    dvals = [dijkstra_value(grid, g) for g in goals] if job.dijkstra else []
    return grid, fmm_sdf(grid), goals, values, dvals


def write_dataset(out_dir, jobs: list[MapJob], workers: int = 1) -> Path:
    """Run ``jobs`` (optionally in a process pool) and write files in job order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if workers > 1:
        from multiprocessing import Pool
        with Pool(workers) as pool:
            results = pool.map(run_job, jobs, chunksize=1)
    else:
        results = map(run_job, jobs)
    rows = []
    for job, (grid, sdf, goals, values, dvals) in zip(jobs, results):
        occ_f, sdf_f = f"{job.sample_id}_occ.eikf", f"{job.sample_id}_sdf.eikf"
        save_field(out / occ_f, grid)
        save_field(out / sdf_f, sdf)
        for j, g in enumerate(goals):
            val_f = f"{job.sample_id}_g{j}_value.eikf"
            save_field(out / val_f, values[j])
            dij_f = ""
            if dvals:
                dij_f = f"{job.sample_id}_g{j}_dijkstra.eikf"
                save_field(out / dij_f, dvals[j])
            rows.append({"sample_id": job.sample_id, "split": job.split, "map_seed": job.map_seed,
                         "erosion": job.erosion, "goal_index": j, "goal_row": g.row, "goal_col": g.col,
                         "occupancy": occ_f, "sdf": sdf_f, "value": val_f, "dijkstra": dij_f})
    with open(out / "manifest.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return out


@dataclass
class Dataset:
    grids: list[OccupancyGrid]
    sdfs: list[ScalarField]
    samples: list[tuple[OccupancyGrid, GoalSpec, ScalarField]]


def load_dataset(data_dir, split: str, target: str = "fmm") -> Dataset:
    """Load one split; ``target`` picks the ``value`` (FMM) or ``dijkstra`` files."""
    d = Path(data_dir)
    manifest = d / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv in {d}")
    col = "value" if target == "fmm" else "dijkstra"
    grids, sdfs, samples, seen = [], [], [], {}
    with open(manifest, newline="") as f:
        for row in csv.DictReader(f):
            if row["split"] != split:
                continue
            sid = row["sample_id"]
            if sid not in seen:
                grid = OccupancyGrid(load_field(d / row["occupancy"]) > 0.5)
                seen[sid] = grid
                grids.append(grid)
                sdfs.append(ScalarField(load_field(d / row["sdf"]).astype(float), grid.cell_size, "sdf"))
            grid = seen[sid]
            if not row[col]:
                raise ValueError(f"dataset has no {target} targets")
            vals = load_field(d / row[col]).astype(float)
            samples.append((grid, GoalSpec(int(row["goal_row"]), int(row["goal_col"])),
                            ScalarField(vals, grid.cell_size, "value")))
    if not grids:
        raise ValueError(f"split {split!r} is empty in {d}")
    return Dataset(grids, sdfs, samples)
