import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnoplan.eikonal import fmm_sdf, fmm_value
from pnoplan.grid import GoalSpec, MapParams, OccupancyGrid, ScalarField, generate_random_map
from pnoplan.numerics import kernel_values, spectral_conv
from pnoplan.operator.layers import DeepNormHead, FourierLayer, MaskedFourierLayer, PointwiseMLP, gelu
from pnoplan.operator.model import (
    FnoConfig, FnoValueModel, PnoConfig, PnoModel, SdfFno, load_model, pno_forward,
    save_model, sdf_forward, smoothed_indicator,
)
from pnoplan.operator.train import (
    MapBatch, TrainConfig, TrainingDiverged, _kink_pattern, gradient_check, loss_and_grads,
    masked_relative_l2, relative_l2_loss, sdf_dataset, train, value_dataset,
)

SMALL_FNO = FnoConfig(width=6, layers=2, modes=3, lift_hidden=8, head_hidden=8)
SMALL_PNO = PnoConfig(width=6, layers=2, modes=3, lift_hidden=8, head_hidden=(8, 8), beta=16.0)


def _quadrature_masked(v, chi, layer):
    # O(N^2) sum over y of chi(x) chi(y) K(x - y) (v(y) - v(x)), kernel from cos/sin sums
    H, W, C = v.shape
    r, c = np.indices((H, W))
    out = np.zeros((H, W, layer.channels))
    for i in range(H):
        for j in range(W):
            K = kernel_values(layer.block, H, W, i - r, j - c)  # (H, W, Cin, Cout)
            diff = v - v[i, j]
            out[i, j] = chi[i, j] * np.einsum("hw,hwio,hwi->o", chi, K, diff)
    return out


def _maps(n, size=16, seed=0):
    return [generate_random_map(seed + k, size, size, MapParams((2, 4), (2, 5))) for k in range(n)]


def _value_samples(grids, n_goals=1):
    out = []
    for g in grids:
        free = np.argwhere(g.cells)
        for k in range(n_goals):
            r, c = free[(k * 37) % len(free)]
            goal = GoalSpec(int(r), int(c))
            out.append((g, goal, fmm_value(g, goal)))
    return out


def _pno_batch(grids, n_goals=1):
    batch = value_dataset(_value_samples(grids, n_goals))
    batch.sdf = np.stack([fmm_sdf(g).values for g in grids])
    return batch


# ---------------------------------------------------------------- indicator

def test_smoothed_indicator_values():
    beta = 64.0
    d = np.array([[0.0, 10 / beta], [-10 / beta, 0.0]])
    chi = smoothed_indicator(d, d, beta)
    assert chi[0, 0] == 0.5
    assert abs(chi[0, 1] - 1.0) <= 1e-8
    assert abs(chi[1, 0]) <= 1e-8
    f = smoothed_indicator(ScalarField(np.ones((2, 2)), 0.5, "reciprocal-cost"), ScalarField(d, 0.5, "sdf"), beta)
    assert f.kind == "indicator"
    with pytest.raises(ValueError):
        smoothed_indicator(d, d, 0.0)
    with pytest.raises(ValueError):
        smoothed_indicator(np.ones((3, 2)), d, beta)


# ---------------------------------------------------------------- layers

def test_pointwise_mlp_is_pointwise():
    rng = np.random.default_rng(0)
    mlp = PointwiseMLP((3, 5, 2), rng)
    x = rng.normal(size=(2, 4, 4, 3))
    y, _ = mlp.forward(x)
    y1, _ = mlp.forward(x[1, 2, 3])
    np.testing.assert_allclose(y[1, 2, 3], y1, atol=1e-14)


def test_masked_layer_matches_quadrature():
    rng = np.random.default_rng(1)
    errs = []
    for case in range(10):
        layer = MaskedFourierLayer(3, 4, rng)
        v = rng.normal(size=(16, 16, 3))
        if case % 2:
            sdf = fmm_sdf(generate_random_map(case, 16, 16, MapParams((1, 3), (2, 5)))).values
        else:
            cells = np.ones((16, 16), bool)
            cells[rng.integers(16), rng.integers(16)] = False
            sdf = fmm_sdf(OccupancyGrid(cells)).values
        chi = smoothed_indicator(sdf, sdf, 16.0)
        fast = layer.nonlocal_term(v[None], chi[None])[0]
        slow = _quadrature_masked(v, chi, layer)
        errs.append(np.linalg.norm(fast - slow) / np.linalg.norm(slow))
    assert max(errs) <= 1e-6


def test_masked_layer_degenerate_masks():
    rng = np.random.default_rng(2)
    layer = MaskedFourierLayer(3, 3, rng)
    v = rng.normal(size=(1, 8, 8, 3))
    pointwise = gelu(v @ layer.params["W"] + layer.params["b"])
    out, _ = layer.forward(v, np.zeros((1, 8, 8)))
    np.testing.assert_allclose(out, pointwise, atol=1e-14)
    layer.params["P"][:] = 0.0
    out, _ = layer.forward(v, np.ones((1, 8, 8)))
    np.testing.assert_allclose(out, pointwise, atol=1e-14)


def test_masked_layer_all_safe_is_difference_kernel_fno():
    # chi = 1: K v(x) - sum_i v_i(x) (K e_i)(x), the plain FNO kernel acting on v(y) - v(x)
    rng = np.random.default_rng(3)
    layer = MaskedFourierLayer(2, 3, rng)
    v = rng.normal(size=(1, 8, 8, 2))
    kv = spectral_conv(v, layer.block)
    ke = [spectral_conv(np.broadcast_to(np.eye(2)[i], v.shape), layer.block) for i in range(2)]
    expected = kv - sum(v[..., i:i + 1] * ke[i] for i in range(2))
    np.testing.assert_allclose(layer.nonlocal_term(v, np.ones((1, 8, 8))), expected, atol=1e-12)


def test_masked_layer_ignores_deep_obstacles():
    rng = np.random.default_rng(4)
    layer = MaskedFourierLayer(3, 4, rng)
    cells = np.ones((32, 32), bool)
    cells[4:20, 4:20] = False
    sdf = fmm_sdf(OccupancyGrid(cells)).values
    chi = smoothed_indicator(sdf, sdf, 64.0)
    deep = chi < 1e-6
    assert deep.any()
    v = rng.normal(size=(1, 32, 32, 3))
    w = v.copy()
    w[0][deep] += 100.0 * rng.normal(size=(deep.sum(), 3))
    a = layer.nonlocal_term(v, chi[None])[0]
    b = layer.nonlocal_term(w, chi[None])[0]
    far = sdf > 0.2
    assert far.any()
    assert np.linalg.norm((a - b)[far]) <= 1e-5 * np.linalg.norm(a[far])


# ---------------------------------------------------------------- DeepNorm head

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 50.0))
def test_deepnorm_properties(seed, alpha):
    rng = np.random.default_rng(seed)
    head = DeepNormHead((5, 7, 6), rng)
    A1, a2 = head.effective_weights()
    assert (A1 >= 0).all() and (a2 >= 0).all()
    u, v, w = rng.normal(size=(3, 5)) * rng.uniform(0.01, 10)
    f = lambda x: head.forward(x)[0]
    assert f(np.zeros(5)) == 0.0
    assert f(u) >= 0.0
    assert f(alpha * u) == pytest.approx(alpha * f(u), rel=1e-10, abs=1e-12)
    assert f(u + v) <= f(u) + f(v) + 1e-9
    # triangle inequality on features a, b, c
    assert f(u - w) <= f(u - v) + f(v - w) + 1e-6


# ---------------------------------------------------------------- gradients

def _grad_ok(model, batch, tol=1e-4):
    model.astype(np.float64)
    errs = gradient_check(model, batch, step=1e-5, per_group=4)
    assert max(errs.values()) <= tol, errs
    return errs


def test_gradcheck_sdf_fno():
    grids = _maps(2, 12)
    errs = _grad_ok(SdfFno(SMALL_FNO, seed=1), sdf_dataset(grids, [fmm_sdf(g) for g in grids]))
    assert {k.split(".")[0] for k in errs} == {"lift", "layers", "head"}


def test_gradcheck_pno_every_group():
    model = PnoModel(SMALL_PNO, seed=2)
    batch = _pno_batch(_maps(1, 12), n_goals=2)
    errs = _grad_ok(model, batch)
    for group in ("lift.W0", "layers.0.P", "layers.1.W", "head.U0", "head.A1", "head.a2"):
        assert group in errs


def test_gradcheck_fno_value():
    batch = value_dataset(_value_samples(_maps(1, 12), 2))
    _grad_ok(FnoValueModel(SMALL_FNO, seed=3), batch)


def test_gradcheck_skips_head_kinks():
    # a wide head puts ReLU kinks inside some +-1e-5 probes; those entries get replaced
    grids = _maps(1, 16)
    cfg = PnoConfig(width=8, layers=1, modes=3, lift_hidden=16, head_hidden=(64, 64), beta=16.0)
    model = PnoModel(cfg, seed=4).astype(np.float64)
    batch = _pno_batch(grids, n_goals=2)
    assert _kink_pattern(SdfFno(SMALL_FNO), sdf_dataset(grids, [fmm_sdf(g) for g in grids])) is None
    assert _kink_pattern(model, batch).dtype == bool
    U0 = model.head.params["U0"].reshape(-1)
    flips = 0
    for i in range(U0.size):
        old = U0[i]
        U0[i] = old + 1e-5
        kp = _kink_pattern(model, batch)
        U0[i] = old - 1e-5
        flips += not np.array_equal(kp, _kink_pattern(model, batch))
        U0[i] = old
    assert flips > 0
    errs = gradient_check(model, batch, step=1e-5, per_group=8)
    assert max(errs.values()) <= 1e-4, errs


def test_zero_loss_zero_grads():
    pred = np.random.default_rng(0).uniform(1, 2, size=(2, 4, 4))
    loss, g = relative_l2_loss(pred, pred.copy(), np.ones_like(pred, bool))
    assert loss == 0.0 and np.abs(g).max() <= 1e-12


def test_gradient_check_needs_float64():
    model = SdfFno(SMALL_FNO).astype(np.float32)
    grids = _maps(1, 8)
    with pytest.raises(ValueError):
        gradient_check(model, sdf_dataset(grids, [fmm_sdf(g) for g in grids]))


# ---------------------------------------------------------------- loss

def test_masked_relative_l2_examples():
    t = np.array([[1.0, 2.0], [np.inf, 3.0]])
    assert masked_relative_l2(t, t) == 0.0
    assert masked_relative_l2(2 * np.where(np.isinf(t), 0, t), t) == pytest.approx(1.0)
    # 8x8 pair, hand-summed: differences of 1 on four cells over a target of all 2s
    tgt = np.full((8, 8), 2.0)
    pred = tgt.copy()
    pred[0, :4] += 1.0
    mask = np.ones((8, 8), bool)
    mask[7] = False
    assert masked_relative_l2(pred, tgt, mask) == pytest.approx(np.sqrt(4) / np.sqrt(56 * 4))
    with pytest.raises(ValueError):
        masked_relative_l2(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        masked_relative_l2(np.zeros((2, 3)), np.ones((2, 2)))


# ---------------------------------------------------------------- forward contracts

def test_pno_forward_contract():
    grids = _maps(1, 16)
    sdf_op = SdfFno(SMALL_FNO, seed=0)
    model = PnoModel(SMALL_PNO, sdf_operator=sdf_op, seed=0)
    g = grids[0]
    goal = GoalSpec(*map(int, np.argwhere(g.cells)[5]))
    V = pno_forward(model, g, goal)
    assert V.kind == "value" and V.values[goal.row, goal.col] == 0.0
    assert (V.values >= 0).all()
    F = model.feature_field(g)
    goal2 = GoalSpec(*map(int, np.argwhere(g.cells)[-1]))
    np.testing.assert_array_equal(pno_forward(model, g, goal2, features=F).values, model(g, goal2).values)
    with pytest.raises(ValueError):
        pno_forward(model, g, GoalSpec(*map(int, np.argwhere(~g.cells)[0])))
    # runs unmodified at higher resolution
    big = generate_random_map(3, 64, 64, MapParams((2, 4), (4, 12)))
    assert pno_forward(model, big, GoalSpec(32, 32)).shape == (64, 64)
    assert sdf_forward(sdf_op, big).shape == (64, 64)
    with pytest.raises(ValueError):
        pno_forward(model, OccupancyGrid(np.ones((4, 4), bool)), GoalSpec(0, 0))


def test_fno_value_model_nonnegative_output():
    model = FnoValueModel(SMALL_FNO, seed=0)
    g = _maps(1, 16)[0]
    V = model(g, GoalSpec(8, 8))
    assert V.shape == (16, 16) and (V.values >= 0).all()


def test_serialization_roundtrip(tmp_path):
    g = _maps(1, 16)[0]
    goal = GoalSpec(8, 8)
    sdf_op = SdfFno(SMALL_FNO, seed=5)
    model = PnoModel(SMALL_PNO, sdf_operator=sdf_op, seed=6).astype(np.float32)
    sdf_op.astype(np.float32)
    save_model(tmp_path / "p.eikm", model, {"seed": "6"})
    back, meta = load_model(tmp_path / "p.eikm", np.float32)
    assert meta["seed"] == "6" and meta["model"] == "pno"
    assert back.config == model.config and back.beta == model.beta
    a, b = pno_forward(model, g, goal).values, pno_forward(back, g, goal).values
    assert np.linalg.norm(a - b) <= 1e-6 * np.linalg.norm(a)
    for m in (SdfFno(SMALL_FNO, seed=5), FnoValueModel(SMALL_FNO, seed=7)):
        save_model(tmp_path / "m.eikm", m)
        back, _ = load_model(tmp_path / "m.eikm")
        for k, v in m.parameters().items():
            np.testing.assert_array_equal(back.parameters()[k], v.astype(np.float32))


# ---------------------------------------------------------------- training

def test_overfit_single_map():
    g = _maps(1, 16, seed=11)[0]
    batch = _pno_batch([g])
    model = PnoModel(PnoConfig(width=8, layers=2, modes=4, lift_hidden=16, head_hidden=(16, 16), beta=16.0), seed=0)
    res = train(model, batch, TrainConfig(epochs=500, batch_size=1, lr=1e-2, lr_final=1e-4))
    assert res.history[-1] < res.history[0]
    loss, _ = loss_and_grads(model, batch, with_grads=False)
    assert loss <= 0.05


def test_training_deterministic_and_resumable(tmp_path):
    grids = _maps(4, 12, seed=20)
    batch = sdf_dataset(grids, [fmm_sdf(g) for g in grids])
    cfg = TrainConfig(epochs=4, batch_size=2, seed=3)
    from pnoplan.operator.train import save_state

    def keep(epoch, model, opt, result):
        save_state(tmp_path / f"s{epoch}.npz", model, opt, epoch, result)

    a = train(SdfFno(SMALL_FNO, seed=1), batch, cfg, on_epoch=keep)
    b = train(SdfFno(SMALL_FNO, seed=1), batch, cfg)
    assert a.history == b.history
    assert a.history[-1] < a.history[0]
    c = train(SdfFno(SMALL_FNO, seed=1), batch, cfg, resume=tmp_path / "s1.npz")
    assert abs(c.history[2] - a.history[2]) <= 1e-9
    assert c.history == a.history


def test_training_divergence_and_empty():
    grids = _maps(2, 12)
    batch = sdf_dataset(grids, [fmm_sdf(g) for g in grids])
    model = SdfFno(SMALL_FNO)
    model.lift.params["W0"][:] = np.nan
    with pytest.raises(TrainingDiverged):
        train(model, batch, TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(SdfFno(SMALL_FNO), batch.take(slice(0, 0)), TrainConfig(epochs=1))


def test_value_dataset_groups():
    grids = _maps(2, 12)
    batch = value_dataset(_value_samples(grids, 3))
    assert batch.goals.shape == (2, 3, 2) and batch.target.shape == (2, 3, 12, 12)
    for b, g in enumerate(grids):
        assert not batch.mask[b][:, ~g.cells].any()
    with pytest.raises(ValueError):
        value_dataset(_value_samples(grids[:1], 2) + _value_samples(grids[1:], 1))
    with pytest.raises(ValueError):
        value_dataset([])
