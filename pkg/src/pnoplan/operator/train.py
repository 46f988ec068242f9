"""Masked relative-L2 loss, Adam, finite-difference gradient check and training loops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..grid import OccupancyGrid, ScalarField
from .model import FnoValueModel, PnoModel, SdfFno


class TrainingDiverged(RuntimeError):
    pass


class GradientCheckFailed(RuntimeError):
    pass


def masked_relative_l2(pred, target, mask=None) -> float:
    """``||(pred - target) * mask|| / ||target * mask||``; non-finite targets are always masked."""
    p = pred.values if isinstance(pred, ScalarField) else np.asarray(pred, dtype=float)
    t = target.values if isinstance(target, ScalarField) else np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise ValueError("pred and target shapes differ")
    m = np.isfinite(t)
    if mask is not None:
        m &= np.asarray(mask, dtype=bool)
    tz = np.where(m, t, 0.0)
    den = np.sqrt((tz ** 2).sum())
    if den == 0.0:
        raise ValueError("target is zero on the mask")
    return float(np.sqrt((np.where(m, p - tz, 0.0) ** 2).sum()) / den)


def relative_l2_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray):
    """Mean over leading axes of per-sample masked relative L2, and its gradient w.r.t. ``pred``.

    ``target`` must already be zero where ``mask`` is false.
    """
    axes = (-2, -1)
    e = np.where(mask, pred - target, 0.0)
    num = np.sqrt((e ** 2).sum(axis=axes))
    den = np.sqrt((target ** 2).sum(axis=axes))
    n = num.size
    loss = float((num / den).mean())
    scale = np.where(num > 0, 1.0 / np.where(num > 0, num, 1.0), 0.0) / den / n
    return loss, e * scale[..., None, None]


# --------------------------------------------------------------------------
# batches

@dataclass
class MapBatch:
    """A group of maps sharing one shape, each with ``G`` goals and targets."""

    occ: np.ndarray                  # (B, H, W) 1 = safe
    goals: np.ndarray | None = None  # (B, G, 2)
    target: np.ndarray | None = None  # (B, G, H, W) or (B, H, W), zero off-mask
    mask: np.ndarray | None = None
    sdf: np.ndarray | None = None    # (B, H, W) SDF fed to the PNO (frozen stage-1 output)

    def take(self, idx):
        sub = lambda a: None if a is None else a[idx]
        return MapBatch(sub(self.occ), sub(self.goals), sub(self.target), sub(self.mask), sub(self.sdf))

    def __len__(self):
        return self.occ.shape[0]


def sdf_dataset(grids: list[OccupancyGrid], sdfs: list[ScalarField]) -> MapBatch:
    occ = np.stack([g.cells.astype(float) for g in grids])
    tgt = np.stack([s.values for s in sdfs])
    return MapBatch(occ, target=tgt, mask=np.ones(tgt.shape, dtype=bool))


def value_dataset(samples) -> MapBatch:
    """Stack ``(grid, goal, target)`` triples; consecutive samples on one map form a group.

    Every group must carry the same number of goals.
    """
    groups = []
    for grid, goal, tgt in samples:
        if not groups or not (groups[-1][0] is grid or groups[-1][0] == grid):
            groups.append((grid, [], []))
        groups[-1][1].append((goal.row, goal.col))
        groups[-1][2].append(tgt.values if isinstance(tgt, ScalarField) else np.asarray(tgt))
    if not groups:
        raise ValueError("empty dataset")
    if len({len(g[1]) for g in groups}) != 1:
        raise ValueError("every map needs the same number of goals")
    occ = np.stack([g[0].cells.astype(float) for g in groups])
    goals = np.array([g[1] for g in groups], dtype=int)
    tgt = np.stack([np.stack(g[2]) for g in groups])
    mask = np.isfinite(tgt) & (occ[:, None] > 0.5)
    return MapBatch(occ, goals, np.where(mask, tgt, 0.0), mask)


# --------------------------------------------------------------------------
# per-model loss + gradient

def loss_and_grads(model, batch: MapBatch, with_grads: bool = True):
    dt = model.dtype
    if isinstance(model, SdfFno):
        pred, cache = model.forward(batch.occ.astype(dt))
        loss, g = relative_l2_loss(pred, batch.target, batch.mask)
        return loss, (model.backward(cache, g.astype(dt)) if with_grads else None)
    if isinstance(model, PnoModel):
        sdf = batch.sdf if batch.sdf is not None else model.sdf(batch.occ.astype(dt))
        F, fc = model.features(batch.occ.astype(dt), sdf.astype(dt))
        V, vc = model.values(F, batch.goals)
        loss, g = relative_l2_loss(V, batch.target, batch.mask)
        return loss, (model.backward(fc, vc, g.astype(dt)) if with_grads else None)
    if isinstance(model, FnoValueModel):
        B, G = batch.goals.shape[:2]
        occ = np.repeat(batch.occ, G, axis=0)
        pred, cache = model.forward(occ.astype(dt), batch.goals.reshape(B * G, 2))
        H, W = occ.shape[1:]
        loss, g = relative_l2_loss(pred, batch.target.reshape(B * G, H, W), batch.mask.reshape(B * G, H, W))
        return loss, (model.backward(cache, g.astype(dt)) if with_grads else None)
    raise TypeError(f"unsupported model {type(model).__name__}")


def evaluate(model, batch: MapBatch, batch_size: int = 8) -> float:
    """Mean per-sample masked relative L2 over ``batch``."""
    tot, n = 0.0, 0
    for s in range(0, len(batch), batch_size):
        sub = batch.take(slice(s, s + batch_size))
        loss, _ = loss_and_grads(model, sub, with_grads=False)
        k = len(sub) * (1 if sub.goals is None else sub.goals.shape[1])
        tot += loss * k
        n += k
    return tot / n


def _kink_pattern(model, batch: MapBatch):
    """ReLU sign pattern of the DeepNorm head (the only non-smooth part), else ``None``."""
    if not isinstance(model, PnoModel):
        return None
    dt = model.dtype
    sdf = batch.sdf if batch.sdf is not None else model.sdf(batch.occ.astype(dt))
    F, _ = model.features(batch.occ.astype(dt), sdf.astype(dt))
    _, (_, (u, z1, h1, z2, h2)) = model.values(F, batch.goals)
    return np.concatenate([(z1 > 0).ravel(), (z2 > 0).ravel()])


def gradient_check(model, batch: MapBatch, step: float = 1e-5, per_group: int = 6, seed: int = 0) -> dict[str, float]:
    """Central finite differences on a few random entries of every parameter.

    Returns the relative error ``|g_a - g_fd| / max(|g_a|, |g_fd|)`` per parameter
    group, measured as vector norms over the sampled entries. Runs in float64.
    An entry whose ``+-step`` probe flips a ReLU of the head is not
    differentiable within the probe, so it is replaced by the next random entry.
    """
    if model.dtype is not np.float64:
        raise ValueError("gradient check needs a float64 model")
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grads(model, batch)
    out = {}
    for name, p in model.parameters().items():
        flat = p.reshape(-1)
        order = rng.permutation(flat.size)
        ga, gf = [], []
        for i in order[:4 * per_group]:
            if len(gf) == per_group:
                break
            old = flat[i]
            flat[i] = old + step
            lp, _ = loss_and_grads(model, batch, with_grads=False)
            kp = _kink_pattern(model, batch)
            flat[i] = old - step
            lm, _ = loss_and_grads(model, batch, with_grads=False)
            km = _kink_pattern(model, batch)
            flat[i] = old
            if kp is not None and not np.array_equal(kp, km):
                continue
            ga.append(grads[name].reshape(-1)[i])
            gf.append((lp - lm) / (2 * step))
        ga, gf = np.array(ga), np.array(gf)
        den = max(np.linalg.norm(ga), np.linalg.norm(gf)) if len(ga) else 0.0
        out[name] = 0.0 if den < 1e-12 else float(np.linalg.norm(ga - gf) / den)
    return out


# --------------------------------------------------------------------------

class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= (lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(p.dtype)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr: float = 3e-3
    lr_final: float = 3e-5
    seed: int = 0
    stop_after: int = 0  # end this session after that many epochs in total (0 = run all)


@dataclass
class TrainResult:
    history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)


def cosine_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.epochs <= 1:
        return cfg.lr
    t = epoch / (cfg.epochs - 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * t))


def save_state(path, model, opt: Adam, epoch: int, result: TrainResult) -> None:
    """Exact float64 resume state (parameters + Adam moments)."""
    arrays = {f"p:{k}": v.astype(np.float64) for k, v in model.parameters().items()}
    arrays.update({f"m:{k}": v for k, v in opt.m.items()})
    arrays.update({f"v:{k}": v for k, v in opt.v.items()})
    arrays["t"] = np.array(opt.t)
    arrays["epoch"] = np.array(epoch)
    arrays["history"] = np.array(result.history)
    arrays["val_history"] = np.array(result.val_history)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_state(path, model, opt: Adam, result: TrainResult) -> int:
    with np.load(path) as z:
        model.set_parameters({k[2:]: z[k] for k in z.files if k.startswith("p:")})
        opt.params = model.parameters()
        opt.m = {k[2:]: z[k].copy() for k in z.files if k.startswith("m:")}
        opt.v = {k[2:]: z[k].copy() for k in z.files if k.startswith("v:")}
        opt.t = int(z["t"])
        result.history = list(z["history"])
        result.val_history = list(z["val_history"])
        return int(z["epoch"])


def train(model, data: MapBatch, cfg: TrainConfig, val: MapBatch | None = None,
          on_epoch: Callable | None = None, resume: str | Path | None = None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Adam on the mean masked relative L2.

    Map order is shuffled each epoch by a generator seeded from ``(seed, epoch)``
    so a resumed run replays the same batches. ``on_epoch(epoch, model, opt,
    result)`` is called after every epoch (checkpointing hook).
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    opt = Adam(model.parameters(), cfg.lr)
    result = TrainResult()
    start = 0
    if resume is not None:
        start = load_state(resume, model, opt, result) + 1
    end = min(cfg.epochs, cfg.stop_after) if cfg.stop_after > 0 else cfg.epochs
    for epoch in range(start, end):
        lr = cosine_lr(cfg, epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(data))
        tot = 0.0
        for s in range(0, len(data), cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            loss, grads = loss_and_grads(model, data.take(idx))
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss/gradient at epoch {epoch}, batch starting {s}")
            opt.step(grads, lr)
            tot += loss * len(idx)
        result.history.append(tot / len(data))
        if val is not None:
            result.val_history.append(evaluate(model, val))
        if log:
            msg = f"epoch {epoch + 1}/{cfg.epochs} loss {result.history[-1]:.5f}"
            if val is not None:
                msg += f" val {result.val_history[-1]:.5f}"
            log(msg)
        if on_epoch:
            on_epoch(epoch, model, opt, result)
    return result
