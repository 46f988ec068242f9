"""Command-line entry point.

Subcommands: gen-data, train-sdf, train-pno, eval, bench, plan,
check-consistency. Exit codes: 0 success, 1 validation failure, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .config import ConfigError, RunConfig, load_config
from .consistency import (check_triangle, compare_erosion_consistency, measure_epsilon_consistency,
                          summarize, write_reports_csv)
from .eikonal import dijkstra_value, fmm_value
from .fileio import load_field, write_pgm
from .grid import (GoalSpec, MapParams, OccupancyGrid, ScalarField, SplitMix64, erode,
                   generate_random_map, load_movingai, resample_average, upsample_goal)
from .operator.model import (FnoConfig, FnoValueModel, PnoConfig, PnoModel, SdfFno, load_model,
                             save_model)
from .operator.train import (GradientCheckFailed, MapBatch, TrainConfig, evaluate, gradient_check,
                             masked_relative_l2, save_state, sdf_dataset, train, value_dataset)
from .planner import (Heuristic, RrtParams, astar, combine_heuristic, default_erosion,
                      epsilon_estimate, euclidean_heuristic, gradient_descent_plan,
                      make_pno_heuristic, rrt, rrt_star, stats_row, write_stats_csv)

GRADCHECK_TOL = 1e-4


class ValidationError(Exception):
    pass


def _out(cfg: RunConfig, name: str) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / f"{name}.config")
    return out


def _log(msg: str) -> None:
    print(msg, flush=True)


def _dtype(cfg):
    return np.float32 if cfg.precision == "float32" else np.float64


# --------------------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig) -> Path:
    out = _out(cfg, "gen-data")
    params = MapParams(cfg.obstacle_count, cfg.obstacle_size)
    jobs = ds.plan_jobs(cfg.seed, cfg.grid_size, cfg.n_maps, cfg.n_val_maps, cfg.n_goals, params,
                        cfg.heuristic_targets, cfg.erosion_range, cfg.eroded_copies)
    ds.write_dataset(out, jobs, workers=cfg.workers)
    _log(f"wrote {len(jobs)} maps x {cfg.n_goals} goals to {out}")
    return out


def _run_gradcheck(model, batch: MapBatch, label: str) -> None:
    """Finite-difference check on a float64 copy of ``model``; raises on failure."""
    import copy
    m64 = copy.deepcopy(model).astype(np.float64)
    if isinstance(m64, PnoModel) and m64.sdf_operator is not None:
        m64.sdf_operator.astype(np.float64)
    errs = gradient_check(m64, batch)
    worst = max(errs, key=errs.get)
    _log(f"{label} gradient check: worst relative error {errs[worst]:.2e} ({worst})")
    if errs[worst] > GRADCHECK_TOL:
        raise GradientCheckFailed(f"gradient check failed for {worst}: {errs[worst]:.3e}")


def _gradcheck_batch(b: MapBatch) -> MapBatch:
    """One map, one goal, every second cell: few ReLU kinks inside the FD step."""
    small = b.take(slice(0, 1))
    sl = (slice(None), slice(None, None, 2), slice(None, None, 2))
    out = MapBatch(small.occ[sl], sdf=None if small.sdf is None else small.sdf[sl])
    if small.goals is None:
        out.target, out.mask = small.target[sl], small.mask[sl]
    else:
        out.goals = small.goals[:, :1] // 2
        out.target = small.target[:, :1][(slice(None),) + sl]
        out.mask = small.mask[:, :1][(slice(None),) + sl]
    return out


def _train_loop(cfg, model, tr: MapBatch, va: MapBatch, out: Path, name: str):
    ckdir = out / "checkpoints"
    ckdir.mkdir(exist_ok=True)

    def on_epoch(epoch, model, opt, result):
        save_model(ckdir / f"{name}_e{epoch + 1:03d}.eikm", model, {"seed": str(cfg.seed), "epoch": str(epoch + 1)})
        save_state(out / f"{name}_state.npz", model, opt, epoch, result)

    tc = TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr, cfg.lr_final, cfg.seed, cfg.stop_after)
    result = train(model, tr, tc, val=va, on_epoch=on_epoch, resume=cfg.resume or None, log=_log)
    save_model(out / f"{name}.eikm", model, {"seed": str(cfg.seed), "epoch": str(len(result.history))})
    with open(out / f"{name}_history.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for k, (a, b) in enumerate(zip(result.history, result.val_history), 1):
            w.writerow([k, repr(float(a)), repr(float(b))])
    return result


def cmd_train_sdf(cfg: RunConfig):
    train_set = ds.load_dataset(cfg.data_dir, "train")
    val_set = ds.load_dataset(cfg.data_dir, "val")
    out = _out(cfg, "train-sdf")
    model = SdfFno(FnoConfig(cfg.sdf_width, cfg.sdf_layers, cfg.sdf_modes, cfg.lift_hidden, cfg.head_hidden[0]),
                   seed=cfg.seed).astype(_dtype(cfg))
    tr = sdf_dataset(train_set.grids, train_set.sdfs)
    va = sdf_dataset(val_set.grids, val_set.sdfs)
    if not cfg.resume:
        _run_gradcheck(model, _gradcheck_batch(tr), "sdf")
    return _train_loop(cfg, model, tr, va, out, "sdf")


def _value_batches(cfg, model_sdf):
    train_set = ds.load_dataset(cfg.data_dir, "train", cfg.target)
    val_set = ds.load_dataset(cfg.data_dir, "val", cfg.target)
    tr, va = value_dataset(train_set.samples), value_dataset(val_set.samples)
    if model_sdf is not None:
        dt = model_sdf.dtype
        for b in (tr, va):
            b.sdf = np.concatenate([model_sdf.predict(b.occ[s:s + 8].astype(dt))
                                    for s in range(0, len(b), 8)]).astype(dt)
    return tr, va


def cmd_train_pno(cfg: RunConfig):
    dt = _dtype(cfg)
    if cfg.model == "pno":
        if not cfg.sdf_checkpoint or not Path(cfg.sdf_checkpoint).exists():
            raise ValidationError("train-pno needs a trained SDF operator (sdf_checkpoint)")
        sdf_model, meta = load_model(cfg.sdf_checkpoint, dt)
        if meta["model"] != "sdf-fno":
            raise ValidationError(f"{cfg.sdf_checkpoint} is not an SDF operator checkpoint")
        beta = cfg.beta if cfg.beta > 0 else float(cfg.grid_size)
        model = PnoModel(PnoConfig(cfg.pno_width, cfg.pno_layers, cfg.pno_modes, cfg.lift_hidden,
                                   cfg.head_hidden, beta), sdf_operator=sdf_model, seed=cfg.seed).astype(dt)
        tr, va = _value_batches(cfg, sdf_model)
        name = "pno"
    else:
        model = FnoValueModel(FnoConfig(cfg.pno_width, cfg.pno_layers, cfg.pno_modes, cfg.lift_hidden,
                                        cfg.head_hidden[0]), seed=cfg.seed).astype(dt)
        tr, va = _value_batches(cfg, None)
        name = "fno"
    out = _out(cfg, f"train-{name}")
    if not cfg.resume:
        _run_gradcheck(model, _gradcheck_batch(tr), name)
    return _train_loop(cfg, model, tr, va, out, name)


# --------------------------------------------------------------------------

def _predict(model, grid: OccupancyGrid, goal: GoalSpec, features=None) -> np.ndarray:
    if isinstance(model, PnoModel):
        from .operator.model import pno_forward
        return pno_forward(model, grid, goal, features).values
    return model(grid, goal).values


def evaluate_resolution(model, samples, factor: int) -> list[float]:
    """Per-sample masked relative L2 after upsampling maps and goals by ``factor``."""
    errs, feats = [], {}
    for grid, goal, target in samples:
        if factor == 1:
            g, gl, tgt = grid, goal, target
        else:
            g = resample_average(grid, grid.height * factor, grid.width * factor)
            gl = upsample_goal(goal, factor)
            tgt = fmm_value(g, gl)
        F = None
        if isinstance(model, PnoModel):
            key = id(grid)
            if key not in feats:
                feats = {key: model.feature_field(g)}
            F = feats[key]
        errs.append(masked_relative_l2(_predict(model, g, gl, F), tgt, g.cells))
    return errs


def cmd_eval(cfg: RunConfig):
    out = _out(cfg, "eval")
    models = []
    for label, path in (("pno", cfg.pno_checkpoint), ("fno", cfg.fno_checkpoint)):
        if path:
            if not Path(path).exists():
                raise ValidationError(f"missing checkpoint {path}")
            models.append((label, load_model(path, np.float32)[0]))
    if not models:
        raise ValidationError("eval needs pno_checkpoint and/or fno_checkpoint")
    val = ds.load_dataset(cfg.data_dir, "val")
    rows = []
    for label, model in models:
        base = None
        for f in cfg.eval_factors:
            errs = evaluate_resolution(model, val.samples, f)
            mean = float(np.mean(errs))
            base = mean if f == 1 else base
            rows.append({"model": label, "dataset": "synthetic", "factor": f,
                         "resolution": cfg.grid_size * f, "samples": len(errs),
                         "rel_l2": f"{mean:.8g}",
                         "ratio_to_1x": f"{mean / base:.6g}" if base else ""})
            _log(f"{label} x{f}: relative L2 {mean:.4f}")
        if cfg.movingai_dir:
            for row in _eval_movingai(cfg, label, model):
                rows.append(row)
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    img = out / "images"
    img.mkdir(exist_ok=True)
    label, model = models[0]
    for k, (grid, goal, target) in enumerate(val.samples[:cfg.images]):
        pred = _predict(model, grid, goal)
        t = target.values
        vmax = float(np.nanmax(np.where(np.isfinite(t), t, np.nan)))
        write_pgm(img / f"{k:02d}_oracle.pgm", t, 0.0, vmax)
        write_pgm(img / f"{k:02d}_{label}.pgm", np.where(grid.cells, pred, np.inf), 0.0, vmax)
        write_pgm(img / f"{k:02d}_abs_error.pgm", np.where(np.isfinite(t), np.abs(pred - t), np.inf))
    return rows


def _eval_movingai(cfg, label, model):
    res = cfg.grid_size * max(cfg.eval_factors)
    for path in sorted(Path(cfg.movingai_dir).glob("*.map")):
        grid = resample_average(load_movingai(path.read_text()), res, res)
        goals = ds.pick_goals(grid, cfg.n_goals, SplitMix64(cfg.seed))
        F = model.feature_field(grid) if isinstance(model, PnoModel) else None
        errs = [masked_relative_l2(_predict(model, grid, g, F), fmm_value(grid, g), grid.cells) for g in goals]
        yield {"model": label, "dataset": f"movingai:{path.name}", "factor": "", "resolution": res,
               "samples": len(errs), "rel_l2": f"{float(np.mean(errs)):.8g}", "ratio_to_1x": ""}


# --------------------------------------------------------------------------

def bench_maps(cfg: RunConfig):
    """Desk-scale city-like maps and reachable start/goal pairs."""
    params = MapParams(cfg.bench_obstacle_count, cfg.bench_obstacle_size)
    stream = SplitMix64(cfg.seed ^ 0xBE7C)
    out = []
    for m in range(cfg.bench_maps):
        seed = stream.next()
        grid = generate_random_map(seed, cfg.bench_size, cfg.bench_size, params)
        rng = SplitMix64(seed)
        pairs = []
        while len(pairs) < cfg.bench_pairs:
            goal = ds.pick_goals(grid, 1, rng)[0]
            V = dijkstra_value(grid, goal).values
            far = np.argwhere(np.isfinite(V) & (V >= 0.4))
            if len(far) == 0:
                continue
            s = far[rng.randint(0, len(far) - 1)]
            pairs.append(((int(s[0]), int(s[1])), goal, V))
        out.append((m, grid, pairs))
    return out


def _bench_map(args):
    cfg, model, (m, grid, pairs) = args
    L = cfg.erosion_layers if cfg.erosion_layers >= 0 else default_erosion(grid.height)
    levels = sorted(set([0, L] + list(cfg.erosion_sweep)))
    feats = {}
    if model is not None:
        for lv in levels:
            feats[lv] = model.feature_field(erode(grid, lv))
    rows, sweep = [], []
    rp = RrtParams(step=cfg.rrt_step or None, goal_bias=cfg.goal_bias, max_samples=cfg.rrt_samples,
                   gamma=cfg.rrt_gamma or None)
    for k, (start, goal, V) in enumerate(pairs):
        map_id = f"{m}:{k}"

        def run(planner, heur_label, erosion, fn):
            _, st = fn()
            st.epsilon_estimate = epsilon_estimate(st.path_length, grid, start, goal, V) if st.success else float("nan")
            return stats_row(map_id, planner, heur_label, erosion, st)

        rows.append(run("astar", "euclidean", 0, lambda: astar(grid, start, goal, euclidean_heuristic(grid, (goal.row, goal.col)))))
        if model is not None:
            heur = {lv: make_pno_heuristic(model, grid, goal, lv, feats[lv]) for lv in levels}
            rows.append(run("astar", "pno-eroded", L, lambda: astar(grid, start, goal, heur[L])))
            rows.append(run("astar", "pno", 0, lambda: astar(grid, start, goal, heur[0])))
            for lv in cfg.erosion_sweep:
                sweep.append(run("astar-sweep", "pno" if lv == 0 else "pno-eroded", lv,
                                 lambda: astar(grid, start, goal, heur[lv])))
        seed = cfg.seed * 1000003 + m * 1009 + k
        rows.append(run("rrt", "none", 0, lambda: rrt(grid, start, goal, RrtParams(**{**rp.__dict__, "seed": seed}))))
        rows.append(run("rrt*", "none", 0, lambda: rrt_star(grid, start, goal, RrtParams(**{**rp.__dict__, "seed": seed}))))
    return rows, sweep


def summarize_bench(rows) -> list[dict]:
    groups = {}
    for r in rows:
        groups.setdefault((r["planner"], r["heuristic"], int(r["erosion"])), []).append(r)
    out = []
    for (p, h, e), rs in groups.items():
        ok = [r for r in rs if int(r["success"])]
        mean = lambda key: float(np.mean([float(r[key]) for r in ok])) if ok else float("nan")
        out.append({"planner": p, "heuristic": h, "erosion": e, "instances": len(rs),
                    "success_rate": f"{len(ok) / len(rs):.6g}", "mean_path_length": f"{mean('path_length'):.8g}",
                    "mean_epsilon": f"{mean('epsilon'):.8g}", "mean_nodes_expanded": f"{mean('nodes_expanded'):.8g}",
                    "mean_wall_time_s": f"{mean('wall_time_s'):.6f}"})
    return out


def cmd_bench(cfg: RunConfig):
    out = _out(cfg, "bench")
    ck = cfg.heuristic_checkpoint or cfg.pno_checkpoint
    model = None
    if ck:
        if not Path(ck).exists():
            raise ValidationError(f"missing checkpoint {ck}")
        model = load_model(ck, np.float32)[0]
    jobs = [(cfg, model, mp) for mp in bench_maps(cfg)]
    if cfg.workers > 1 and not cfg.deterministic:
        from multiprocessing import Pool
        with Pool(cfg.workers) as pool:
            results = pool.map(_bench_map, jobs, chunksize=1)
    else:
        results = [_bench_map(j) for j in jobs]
    rows = [r for rs, _ in results for r in rs]
    sweep = [r for _, sw in results for r in sw]
    write_stats_csv(out / "bench.csv", rows)
    write_stats_csv(out / "erosion_sweep.csv", sweep)
    summary = summarize_bench(rows) + summarize_bench(sweep)
    with open(out / "bench_summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    for s in summary:
        _log(f"{s['planner']:12s} {s['heuristic']:11s} erosion={s['erosion']:<3d} eps={float(s['mean_epsilon']):.4f} "
             f"nodes={float(s['mean_nodes_expanded']):.1f} success={s['success_rate']}")
    return rows, sweep


# --------------------------------------------------------------------------

def _load_map(path: str) -> OccupancyGrid:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"map file {path} not found")
    if p.suffix == ".map":
        return load_movingai(p.read_text())
    return OccupancyGrid(load_field(p) > 0.5)


def cmd_plan(cfg: RunConfig):
    if not cfg.map_file:
        raise ValidationError("plan needs map_file")
    grid = _load_map(cfg.map_file)
    start, goal = tuple(cfg.start), GoalSpec(*cfg.goal)
    for name, c in (("start", start), ("goal", (goal.row, goal.col))):
        if not grid.is_safe(*c):
            raise ValidationError(f"{name} {c} is not a safe cell")
    out = _out(cfg, "plan")
    rp = RrtParams(step=cfg.rrt_step or None, goal_bias=cfg.goal_bias, max_samples=cfg.rrt_samples,
                   seed=cfg.seed, gamma=cfg.rrt_gamma or None)
    if cfg.method == "astar-euclidean":
        path, st = astar(grid, start, goal, euclidean_heuristic(grid, (goal.row, goal.col)))
    elif cfg.method == "astar-pno":
        ck = cfg.heuristic_checkpoint or cfg.pno_checkpoint
        if not ck or not Path(ck).exists():
            raise ValidationError("astar-pno needs heuristic_checkpoint or pno_checkpoint")
        model = load_model(ck, np.float32)[0]
        L = cfg.erosion_layers if cfg.erosion_layers >= 0 else default_erosion(grid.height)
        path, st = astar(grid, start, goal, make_pno_heuristic(model, grid, goal, L))
    elif cfg.method == "gradient":
        path, st = gradient_descent_plan(fmm_value(grid, goal), grid.center(*start), grid=grid, goal=goal)
    elif cfg.method == "rrt":
        path, st = rrt(grid, start, goal, rp)
    else:
        path, st = rrt_star(grid, start, goal, rp)
    V = dijkstra_value(grid, goal).values
    if st.success and np.isfinite(V[start]):
        st.epsilon_estimate = epsilon_estimate(st.path_length, grid, start, goal, V)
    with open(out / "path.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["row_coord", "col_coord"])
        for p in path.waypoints:
            w.writerow([f"{p[0]:.12g}", f"{p[1]:.12g}"])
    (out / "stats.txt").write_text(
        f"method = {cfg.method}\nsuccess = {int(st.success)}\nreason = {st.reason}\n"
        f"path_length = {st.path_length:.12g}\nepsilon = {st.epsilon_estimate:.12g}\n"
        f"nodes_expanded = {st.nodes_expanded}\nwall_time_s = {st.wall_time:.6f}\n")
    _log(f"{cfg.method}: success={st.success} length={st.path_length:.6f} eps={st.epsilon_estimate:.4f} "
         f"nodes={st.nodes_expanded}")
    return path, st


# --------------------------------------------------------------------------

def cmd_check_consistency(cfg: RunConfig):
    ck = cfg.heuristic_checkpoint or cfg.pno_checkpoint
    if not ck or not Path(ck).exists():
        raise ValidationError("check-consistency needs heuristic_checkpoint or pno_checkpoint")
    model = load_model(ck, np.float32)[0]
    out = _out(cfg, "check-consistency")
    sub = RunConfig(**{**cfg.__dict__, "bench_maps": cfg.consistency_maps, "bench_pairs": 1})
    rows, sweep_rows, tri_rows = [], [], []
    untrained = PnoModel(model.config, sdf_operator=model.sdf_operator, seed=cfg.seed + 1)
    for m, grid, pairs in bench_maps(sub):
        _, goal, V = pairs[0]
        L = cfg.erosion_layers if cfg.erosion_layers >= 0 else default_erosion(grid.height)
        oracle = Heuristic(np.where(np.isfinite(V), V, 0.0), "oracle")
        rows.append((m, measure_epsilon_consistency(oracle, grid, goal, cfg.consistency_pairs, cfg.seed)))
        heur = make_pno_heuristic(model, grid, goal, L)
        r = measure_epsilon_consistency(heur, grid, goal, cfg.consistency_pairs, cfg.seed, oracle_grid=erode(grid, L))
        r.erosion = L
        rows.append((m, r))
        cmp = compare_erosion_consistency(model, grid, goal, list(cfg.erosion_sweep), cfg.consistency_pairs, cfg.seed)
        sweep_rows.extend((m, rep) for rep in cmp.reports)
        for label, mdl in (("trained", model), ("untrained", untrained)):
            n, worst = check_triangle(mdl, grid, 10000, cfg.seed)
            tri_rows.append({"map_id": m, "model": label, "triples": 10000, "violations": n,
                             "max_violation": f"{worst:.6g}"})
    write_reports_csv(out / "consistency.csv", rows)
    write_reports_csv(out / "erosion_consistency.csv", sweep_rows)
    with open(out / "triangle.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(tri_rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(tri_rows)
    text = summarize(rows)
    (out / "consistency.txt").write_text(text)
    _log(text.rstrip())
    return rows, sweep_rows, tri_rows


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-sdf": cmd_train_sdf,
    "train-pno": cmd_train_pno,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "plan": cmd_plan,
    "check-consistency": cmd_check_consistency,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are validation failures (exit 1), not argparse's exit 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pnoplan", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--seed", type=int, help="override the configured seed (u64)")
    p.add_argument("--workers", type=int, help="worker processes for independent instances")
    p.add_argument("--deterministic", action="store_true", help="sequential execution and reduction")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("workers must be >= 1")
            cfg.workers = args.workers
        if args.deterministic:
            cfg.deterministic = True
            cfg.workers = 1
        COMMANDS[args.command](cfg)
    except (ConfigError, ValidationError, GradientCheckFailed, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
