"""Plain-text ``key = value`` run configuration.

Lines starting with ``#`` are comments. Tuples are comma-separated. Unknown
keys are rejected. Every command writes the resolved configuration next to
its outputs, and that file alone reproduces the run.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import get_type_hints


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    out_dir: str = "out"
    data_dir: str = "data"
    seed: int = 0
    workers: int = 1
    deterministic: bool = False

    # dataset
    grid_size: int = 64
    n_maps: int = 200
    n_val_maps: int = 20
    n_goals: int = 5
    obstacle_count: tuple[int, int] = (6, 12)
    obstacle_size: tuple[int, int] = (4, 16)
    heuristic_targets: bool = False       # also write lattice (Dijkstra) value fields
    erosion_range: tuple[int, int] = (0, 0)  # eroded copies get uniform layers in this range
    eroded_copies: int = 0

    # models
    sdf_width: int = 16
    sdf_layers: int = 4
    sdf_modes: int = 8
    pno_width: int = 16
    pno_layers: int = 4
    pno_modes: int = 8
    lift_hidden: int = 64
    head_hidden: tuple[int, int] = (64, 64)
    beta: float = 0.0                     # 0 -> 1 / cell_size at the training resolution
    model: str = "pno"                    # pno | fno (plain-FNO value ablation)
    target: str = "fmm"                   # fmm | dijkstra

    # training
    epochs: int = 60
    batch_size: int = 4
    lr: float = 3e-3
    lr_final: float = 3e-5
    precision: str = "float32"            # float32 | float64
    resume: str = ""
    stop_after: int = 0                   # stop after this many epochs (0 = all); resume later
    sdf_checkpoint: str = ""
    pno_checkpoint: str = ""
    fno_checkpoint: str = ""
    heuristic_checkpoint: str = ""

    # evaluation
    eval_factors: tuple[int, ...] = (1, 2, 4)
    movingai_dir: str = ""
    images: int = 4

    # benchmark / planning
    bench_size: int = 128
    bench_maps: int = 10
    bench_pairs: int = 5
    bench_obstacle_count: tuple[int, int] = (12, 24)
    bench_obstacle_size: tuple[int, int] = (8, 32)
    erosion_layers: int = -1              # -1 -> round(12 * H / 256)
    erosion_sweep: tuple[int, ...] = (0, 2, 4, 6, 8)
    rrt_samples: int = 3000
    rrt_step: float = 0.0                 # 0 -> 4 * cell_size
    goal_bias: float = 0.05
    rrt_gamma: float = 0.0                # 0 -> 1.5 * domain diagonal
    map_file: str = ""
    start: tuple[int, int] = (0, 0)
    goal: tuple[int, int] = (0, 0)
    method: str = "astar-euclidean"       # astar-euclidean | astar-pno | gradient | rrt | rrt-star
    consistency_maps: int = 10
    consistency_pairs: int = 200

    def validate(self) -> "RunConfig":
        if self.model not in ("pno", "fno"):
            raise ConfigError("model must be 'pno' or 'fno'")
        if self.target not in ("fmm", "dijkstra"):
            raise ConfigError("target must be 'fmm' or 'dijkstra'")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")
        if self.method not in ("astar-euclidean", "astar-pno", "gradient", "rrt", "rrt-star"):
            raise ConfigError(f"unknown method {self.method!r}")
        for name in ("obstacle_count", "obstacle_size", "erosion_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: empty range")
        if self.grid_size < 2 or self.n_goals < 1 or self.n_maps < 1:
            raise ConfigError("grid_size, n_goals and n_maps must be positive")
        return self

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def _convert(name: str, raw: str, typ):
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, float, str):
            return typ(raw)
        # tuple[int, int] / tuple[int, ...]
        inner = typ.__args__[0]
        vals = tuple(inner(x) for x in raw.split(",") if x.strip())
        if len(typ.__args__) == 2 and typ.__args__[1] is not Ellipsis and len(vals) != 2:
            raise ValueError(raw)
        if not (len(typ.__args__) == 2 and typ.__args__[1] is Ellipsis) and len(vals) != len(typ.__args__):
            raise ValueError(raw)
        return vals
    except (ValueError, TypeError):
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = RunConfig() if base is None else RunConfig(**{f.name: getattr(base, f.name) for f in fields(base)})
    hints = get_type_hints(RunConfig)
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ConfigError(f"line {n}: expected key = value")
        if key not in hints:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        setattr(cfg, key, _convert(key, raw, hints[key]))
    return cfg.validate()


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
