"""SDF operator, planning neural operator and the plain-FNO value ablation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..fileio import read_checkpoint, write_checkpoint
from ..grid import GoalSpec, OccupancyGrid, ScalarField, coordinate_channels
from .layers import (DeepNormHead, FourierLayer, Layer, MaskedFourierLayer,
                     PointwiseMLP)


def coord_features(B: int, H: int, W: int, dtype=np.float64) -> np.ndarray:
    xs, ys = coordinate_channels(H, W)
    return np.broadcast_to(np.stack([xs, ys], axis=-1), (B, H, W, 2)).astype(dtype)


def smoothed_indicator(occupancy, sdf, beta: float):
    """Smoothed safe-set indicator ``0.5 * (1 + tanh(beta * sdf))``.

    Works on arrays or ``ScalarField`` inputs (returning a field of kind
    ``indicator`` in the latter case). ``occupancy`` only fixes the shape.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if isinstance(sdf, ScalarField):
        occ = occupancy.values if isinstance(occupancy, ScalarField) else np.asarray(occupancy)
        if occ.shape != sdf.shape:
            raise ValueError("occupancy and sdf shapes differ")
        return ScalarField(0.5 * (1.0 + np.tanh(beta * sdf.values)), sdf.cell_size, "indicator")
    if np.shape(occupancy) != np.shape(sdf):
        raise ValueError("occupancy and sdf shapes differ")
    return 0.5 * (1.0 + np.tanh(beta * np.asarray(sdf)))


class _Composite:
    """Named access to the parameters of a stack of layers."""

    dtype = np.float64

    def _named_layers(self) -> list[tuple[str, Layer]]:
        raise NotImplementedError

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self._named_layers():
            for k, v in layer.params.items():
                out[f"{prefix}.{k}"] = v
        return out

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        for prefix, layer in self._named_layers():
            for k in layer.params:
                name = f"{prefix}.{k}"
                if name not in values:
                    raise KeyError(f"missing parameter {name}")
                arr = np.asarray(values[name], dtype=self.dtype)
                if arr.shape != layer.params[k].shape:
                    raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {layer.params[k].shape}")
                layer.params[k] = arr.copy()

    def astype(self, dtype):
        self.dtype = np.dtype(dtype).type
        for _, layer in self._named_layers():
            for k in layer.params:
                layer.params[k] = layer.params[k].astype(self.dtype)
        return self

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def parameter_groups(self) -> list[str]:
        return [prefix for prefix, _ in self._named_layers()]


@dataclass
class FnoConfig:
    width: int = 24
    layers: int = 4
    modes: int = 12
    lift_hidden: int = 64
    head_hidden: int = 64


class SdfFno(_Composite):
    """Plain FNO mapping an occupancy map to its signed distance field."""

    kind = "sdf-fno"
    in_features = 3  # occupancy, x, y

    def __init__(self, config: FnoConfig = FnoConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.lift = PointwiseMLP((self.in_features, c.lift_hidden, c.width), rng)
        self.layers = [FourierLayer(c.width, c.modes, rng, activation=(k < c.layers - 1))
                       for k in range(c.layers)]
        self.head = PointwiseMLP((c.width, c.head_hidden, 1), rng)

    def _named_layers(self):
        return ([("lift", self.lift)] + [(f"layers.{k}", l) for k, l in enumerate(self.layers)]
                + [("head", self.head)])

    def inputs(self, occ: np.ndarray) -> np.ndarray:
        B, H, W = occ.shape
        return np.concatenate([occ[..., None].astype(self.dtype), coord_features(B, H, W, self.dtype)], axis=-1)

    def forward(self, occ: np.ndarray):
        """``occ``: ``(B, H, W)`` 0/1 array -> ``(B, H, W)`` signed distance."""
        h, c_lift = self.lift.forward(self.inputs(occ))
        caches = []
        for layer in self.layers:
            h, c = layer.forward(h)
            caches.append(c)
        out, c_head = self.head.forward(h)
        return out[..., 0], (c_lift, caches, c_head)

    def backward(self, cache, g):
        c_lift, caches, c_head = cache
        grads = {}
        gh, gr = self.head.backward(c_head, g[..., None])
        grads.update({f"head.{k}": v for k, v in gr.items()})
        for k in reversed(range(len(self.layers))):
            gh, gr = self.layers[k].backward(caches[k], gh)
            grads.update({f"layers.{k}.{n}": v for n, v in gr.items()})
        _, gr = self.lift.backward(c_lift, gh)
        grads.update({f"lift.{k}": v for k, v in gr.items()})
        return grads

    def predict(self, occ: np.ndarray) -> np.ndarray:
        return self.forward(occ)[0]

    def __call__(self, grid: OccupancyGrid) -> ScalarField:
        return sdf_forward(self, grid)


def sdf_forward(model: SdfFno, grid: OccupancyGrid) -> ScalarField:
    occ = grid.cells.astype(float)[None]
    return ScalarField(np.asarray(model.predict(occ)[0], dtype=float), grid.cell_size, "sdf")


@dataclass
class PnoConfig:
    width: int = 24
    layers: int = 4
    modes: int = 12
    lift_hidden: int = 64
    head_hidden: tuple[int, int] = (64, 64)
    beta: float = 64.0


class PnoModel(_Composite):
    """Planning neural operator.

    occupancy -> SDF operator -> smoothed indicator -> lift -> masked Fourier
    layers -> feature field ``F``; the value at ``x`` for goal ``g`` is
    ``f(F(x) - F(g))`` with ``f`` a :class:`DeepNormHead`.

    ``beta`` is fixed in normalized length units when the model is built
    (``1 / cell_size`` of the training resolution) and reused at every
    inference resolution.
    """

    kind = "pno"
    in_features = 4  # occupancy, sdf, x, y

    def __init__(self, config: PnoConfig = PnoConfig(), sdf_operator: SdfFno | None = None, seed: int = 0):
        self.config = config
        self.beta = float(config.beta)
        self.sdf_operator = sdf_operator
        rng = np.random.default_rng(seed)
        c = config
        self.lift = PointwiseMLP((self.in_features, c.lift_hidden, c.width), rng)
        self.layers = [MaskedFourierLayer(c.width, c.modes, rng) for _ in range(c.layers)]
        self.head = DeepNormHead((c.width,) + tuple(c.head_hidden), rng)

    def _named_layers(self):
        return ([("lift", self.lift)] + [(f"layers.{k}", l) for k, l in enumerate(self.layers)]
                + [("head", self.head)])

    # -- pipeline pieces ---------------------------------------------------
    def sdf(self, occ: np.ndarray) -> np.ndarray:
        if self.sdf_operator is None:
            raise RuntimeError("PNO has no SDF operator attached")
        return self.sdf_operator.predict(occ)

    def indicator(self, sdf: np.ndarray) -> np.ndarray:
        return smoothed_indicator(sdf, sdf, self.beta)

    def features(self, occ: np.ndarray, sdf: np.ndarray | None = None):
        """``(B, H, W)`` occupancy -> feature field ``(B, H, W, width)`` and cache."""
        if sdf is None:
            sdf = self.sdf(occ)
        B, H, W = occ.shape
        chi = self.indicator(sdf).astype(self.dtype)
        x = np.concatenate([occ[..., None], sdf[..., None]], axis=-1).astype(self.dtype)
        x = np.concatenate([x, coord_features(B, H, W, self.dtype)], axis=-1)
        h, c_lift = self.lift.forward(x)
        caches = []
        for layer in self.layers:
            h, c = layer.forward(h, chi)
            caches.append(c)
        return h, (c_lift, caches)

    def values(self, F: np.ndarray, goals):
        """Values for each map ``b`` and goal ``goals[b][j]`` -> ``(B, G, H, W)``."""
        B, H, W, C = F.shape
        gidx = np.asarray(goals, dtype=int)  # (B, G, 2)
        Fg = F[np.arange(B)[:, None], gidx[..., 0], gidx[..., 1]]  # (B, G, C)
        u = F[:, None] - Fg[:, :, None, None, :]
        V, c_head = self.head.forward(u)
        return V, (gidx, c_head)

    def backward(self, f_cache, v_cache, gV):
        c_lift, caches = f_cache
        gidx, c_head = v_cache
        grads = {}
        gu, gr = self.head.backward(c_head, gV)
        grads.update({f"head.{k}": v for k, v in gr.items()})
        gF = gu.sum(axis=1)
        B = gF.shape[0]
        gsum = gu.sum(axis=(2, 3))  # (B, G, C)
        for b in range(B):
            for j in range(gidx.shape[1]):
                gF[b, gidx[b, j, 0], gidx[b, j, 1]] -= gsum[b, j]
        for k in reversed(range(len(self.layers))):
            gF, gr = self.layers[k].backward(caches[k], gF)
            grads.update({f"layers.{k}.{n}": v for n, v in gr.items()})
        _, gr = self.lift.backward(c_lift, gF)
        grads.update({f"lift.{k}": v for k, v in gr.items()})
        return grads

    def feature_field(self, grid: OccupancyGrid) -> np.ndarray:
        occ = grid.cells.astype(self.dtype)[None]
        return self.features(occ)[0][0]

    def value_from_features(self, F: np.ndarray, goal: GoalSpec, cell_size: float) -> ScalarField:
        u = F - F[goal.row, goal.col]
        V = np.asarray(self.head.forward(u)[0], dtype=float)
        V[goal.row, goal.col] = 0.0
        return ScalarField(V, cell_size, "value")

    def __call__(self, grid: OccupancyGrid, goal: GoalSpec) -> ScalarField:
        return pno_forward(self, grid, goal)


def pno_forward(model: PnoModel, grid: OccupancyGrid, goal: GoalSpec,
                features: np.ndarray | None = None) -> ScalarField:
    """Predicted value field; pass ``features`` to reuse a map's feature field across goals."""
    goal.validate(grid)
    F = model.feature_field(grid) if features is None else features
    return model.value_from_features(F, goal, grid.cell_size)


class FnoValueModel(_Composite):
    """Ablation: plain FNO value predictor with the goal given as input channels.

    Inputs per point: occupancy, x, y, goal_x, goal_y. Unmasked Fourier layers
    and a pointwise MLP head; no triangle-inequality structure.
    """

    kind = "fno-value"
    in_features = 5

    def __init__(self, config: FnoConfig = FnoConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.lift = PointwiseMLP((self.in_features, c.lift_hidden, c.width), rng)
        self.layers = [FourierLayer(c.width, c.modes, rng, activation=(k < c.layers - 1))
                       for k in range(c.layers)]
        self.head = PointwiseMLP((c.width, c.head_hidden, 1), rng)

    def _named_layers(self):
        return ([("lift", self.lift)] + [(f"layers.{k}", l) for k, l in enumerate(self.layers)]
                + [("head", self.head)])

    def inputs(self, occ: np.ndarray, goals: np.ndarray) -> np.ndarray:
        """``occ`` ``(N, H, W)``, ``goals`` ``(N, 2)`` cell indices."""
        N, H, W = occ.shape
        h = 1.0 / max(H, W)
        gp = (np.asarray(goals, dtype=float) + 0.5) * h  # (row, col)
        gx = np.broadcast_to(gp[:, None, None, 1], (N, H, W))
        gy = np.broadcast_to(gp[:, None, None, 0], (N, H, W))
        return np.concatenate([occ[..., None], coord_features(N, H, W), gx[..., None], gy[..., None]],
                              axis=-1).astype(self.dtype)

    def forward(self, occ, goals):
        h, c_lift = self.lift.forward(self.inputs(occ, goals))
        caches = []
        for layer in self.layers:
            h, c = layer.forward(h)
            caches.append(c)
        out, c_head = self.head.forward(h)
        return out[..., 0], (c_lift, caches, c_head)

    backward = SdfFno.backward

    def __call__(self, grid: OccupancyGrid, goal: GoalSpec) -> ScalarField:
        goal.validate(grid)
        occ = grid.cells.astype(self.dtype)[None]
        V = np.asarray(self.forward(occ, np.array([[goal.row, goal.col]]))[0][0], dtype=float)
        return ScalarField(np.maximum(V, 0.0), grid.cell_size, "value")


# --------------------------------------------------------------------------
# checkpoints

def _config_meta(prefix, cfg) -> dict[str, str]:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f"{prefix}{f.name}"] = ",".join(map(str, v)) if isinstance(v, tuple) else repr(v)
    return out


def _config_from_meta(cls, prefix, meta):
    kw = {}
    for f in fields(cls):
        raw = meta[f"{prefix}{f.name}"]
        default = getattr(cls(), f.name)
        if isinstance(default, tuple):
            kw[f.name] = tuple(int(x) for x in raw.split(","))
        elif isinstance(default, float):
            kw[f.name] = float(raw)
        else:
            kw[f.name] = int(raw)
    return cls(**kw)


def save_model(path, model, extra_meta: dict[str, str] | None = None) -> None:
    """Write an EIKM checkpoint (float32 tensors + text metadata)."""
    meta = {"model": model.kind, "fft_norm": "forward=none,inverse=1/(H*W)"}
    tensors = {}
    if isinstance(model, PnoModel):
        meta.update(_config_meta("pno.", model.config))
        if model.sdf_operator is not None:
            meta["has_sdf"] = "1"
            meta.update(_config_meta("sdf.", model.sdf_operator.config))
            tensors.update({f"sdf.{k}": v for k, v in model.sdf_operator.parameters().items()})
    else:
        meta.update(_config_meta("fno.", model.config))
    tensors.update(model.parameters())
    meta.update(extra_meta or {})
    write_checkpoint(path, tensors, meta)


def load_model(path, dtype=np.float64):
    tensors, meta = read_checkpoint(path)
    kind = meta.get("model")
    if kind == "pno":
        sdf = None
        if meta.get("has_sdf") == "1":
            sdf = SdfFno(_config_from_meta(FnoConfig, "sdf.", meta)).astype(dtype)
            sdf.set_parameters({k[4:]: v for k, v in tensors.items() if k.startswith("sdf.")})
        model = PnoModel(_config_from_meta(PnoConfig, "pno.", meta), sdf_operator=sdf).astype(dtype)
        model.set_parameters({k: v for k, v in tensors.items() if not k.startswith("sdf.")})
    elif kind in ("sdf-fno", "fno-value"):
        cls = SdfFno if kind == "sdf-fno" else FnoValueModel
        model = cls(_config_from_meta(FnoConfig, "fno.", meta)).astype(dtype)
        model.set_parameters(tensors)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return model, meta
