import math

import numpy as np
import pytest

from qssm import engine
from qssm.data import load_csv, prepare, write_sine_csv
from qssm.engine import (Batch, ModelSpec, TrainConfig, TrainState, adam_step, backward,
                         build_store, early_stop_check, evaluate_loss, forward_loss, kaiming_init,
                         scheduler_step)
from qssm.errors import ContractViolation
from qssm.gradcheck import check_model, tiny_model


def _spec(**kw):
    base = dict(n_in=3, n_out=2, window=5, horizon=3, proj_width=6, latent_width=4,
                calendar_indices=(2,), dropout_p=0.0)
    base.update(kw)
    return ModelSpec(**base)


def _batch(rng, spec, B=4):
    return Batch(x=rng.normal(size=(B, spec.window, spec.n_in)),
                 y=rng.normal(size=(B, spec.horizon, spec.n_out)),
                 x_last=rng.normal(size=(B, spec.n_out)))


def _model(seed=0, **kw):
    spec = _spec(**kw)
    store = build_store(spec)
    kaiming_init(store, np.random.default_rng(seed))
    return spec, store


@pytest.fixture(scope="module")
def sine_data(tmp_path_factory):
    path = write_sine_csv(tmp_path_factory.mktemp("d") / "sine.csv", n_rows=400, period=24)
    return prepare(load_csv(path), window=16, horizon=4)


def test_kaiming_init():
    spec = _spec(proj_width=128, latent_width=128, n_in=128)
    store = build_store(spec)
    kaiming_init(store, np.random.default_rng(0))
    assert engine.gate_value(store, spec) == 0.5
    w = store["backbone.latent_weight"]
    assert abs(w.var() / (2 / 128) - 1) < 0.1
    for name, p in store.items():
        if p.kind == "bias":
            assert not np.any(p.value), name
    assert np.all(store["backbone.ln_gamma"] == 1) and store["backbone.alpha"] == 0


def test_classical_store_has_no_quantum_parameters():
    spec, store = _model(gate="classical")
    assert "gate.theta1" not in store and "cgate.weight" in store
    assert store["cgate.weight"].shape == (3,)
    assert engine.gate_value(store, spec, [engine.WindowSample(np.ones((5, 3)), np.zeros((3, 2)),
                                                               np.zeros(2))]) == 0.5


def test_loss_zero_and_constant_offset():
    rng = np.random.default_rng(1)
    spec, store = _model()
    b = _batch(rng, spec)
    y, _ = engine.predict(b, store, spec)
    b.y = y.copy()
    assert forward_loss(b, store, spec)[0] == 0.0
    b.y = y - 2.0
    assert forward_loss(b, store, spec)[0] == pytest.approx(4.0, abs=1e-12)


def _straight_line_forecast(store, x, x_last, cal):
    """Independent reimplementation for one window with the quantum gate."""
    s = (store["gate.w1"] * math.cos(store["gate.theta1"]) * math.cos(store["gate.phi1"])
         + store["gate.w2"] * math.cos(store["gate.theta2"]) * math.cos(store["gate.phi2"])
         + store["gate.b_g"])
    g = min(max(1 / (1 + math.exp(-s)), 0.05), 0.95)
    c = x[:, cal].mean() if cal else 0.0
    h = np.zeros(store["backbone.bias"].shape)
    for row in x:
        a = (store["backbone.latent_weight"] @ (store["backbone.proj_weight"] @ row
                                                + store["backbone.proj_bias"])
             + store["backbone.bias"] + store["backbone.alpha"] * c)
        u = store["backbone.ln_gamma"] * (a - a.mean()) / math.sqrt(a.var() + 1e-5) + store["backbone.ln_beta"]
        h = (1 - g) * h + g * u
    z = np.maximum(store["decoder.w1"] @ h + store["decoder.b1"], 0)
    out = store["decoder.w2"] @ z + store["decoder.b2"]
    return out.reshape(-1, len(x_last)) + x_last


def test_forward_matches_straight_line_reference():
    spec, store, samples = tiny_model(seed=3)
    y, _ = engine.predict(samples, store, spec)
    for yi, s in zip(y, samples):
        ref = _straight_line_forecast(store, s.X, s.x_last, list(spec.calendar_indices))
        assert np.max(np.abs(yi - ref)) < 1e-12


@pytest.mark.parametrize("gate", ["quantum", "classical", "classical_step"])
@pytest.mark.parametrize("seed", range(2))
def test_backward_matches_finite_differences(gate, seed):
    spec, store, samples = tiny_model(seed, gate)
    res = check_model(spec, store, samples, tol=1e-7)
    assert res.ok, res.failures


def test_gradcheck_refuses_dropout():
    spec, store, samples = tiny_model(0, dropout_p=0.1)
    with pytest.raises(ValueError, match="dropout"):
        check_model(spec, store, samples)


def test_zero_loss_gives_zero_gradients():
    rng = np.random.default_rng(2)
    spec, store = _model()
    b = _batch(rng, spec)
    b.y = engine.predict(b, store, spec)[0].copy()
    _, cache = forward_loss(b, store, spec)
    backward(cache, store)
    assert all(not np.any(g) for g in store.gradients().values())


def test_duplicated_batch_gives_same_gradients():
    rng = np.random.default_rng(3)
    spec, store = _model(seed=3)
    b = _batch(rng, spec)
    _, cache = forward_loss(b, store, spec)
    backward(cache, store)
    g1 = store.gradients()
    store.zero_grad()
    b2 = Batch(np.concatenate([b.x, b.x]), np.concatenate([b.y, b.y]), np.concatenate([b.x_last, b.x_last]))
    _, cache = forward_loss(b2, store, spec)
    backward(cache, store)
    for k, g in store.gradients().items():
        assert np.allclose(g, g1[k], rtol=1e-12, atol=1e-15), k


def test_permuted_batch_gives_same_loss_and_gradients():
    rng = np.random.default_rng(4)
    spec, store = _model(seed=4)
    b = _batch(rng, spec, B=6)
    loss1, cache = forward_loss(b, store, spec)
    backward(cache, store)
    g1 = store.gradients()
    store.zero_grad()
    perm = rng.permutation(6)
    loss2, cache = forward_loss(Batch(b.x[perm], b.y[perm], b.x_last[perm]), store, spec)
    backward(cache, store)
    assert loss2 == pytest.approx(loss1, rel=1e-14)
    for k, g in store.gradients().items():
        assert np.allclose(g, g1[k], rtol=1e-12, atol=1e-15), k


def test_stale_or_reused_cache_is_refused():
    rng = np.random.default_rng(5)
    spec, store = _model()
    b = _batch(rng, spec)
    _, cache = forward_loss(b, store, spec)
    backward(cache, store)
    with pytest.raises(ContractViolation):
        backward(cache, store)
    _, cache = forward_loss(b, store, spec)
    store.set_value("decoder.b2", store["decoder.b2"] + 1)
    with pytest.raises(ContractViolation):
        backward(cache, store)


def test_adam_zero_gradient_no_decay_is_identity():
    spec, store = _model()
    before = store.snapshot()
    adam_step(store, TrainConfig(weight_decay=0.0), 1)
    for k, v in store.snapshot().items():
        assert np.array_equal(v, before[k]), k


def test_adam_first_step_is_signed_lr():
    spec, store = _model()
    rng = np.random.default_rng(6)
    before = store.snapshot()
    grads = {}
    for name, p in store.items():
        p.grad[...] = rng.normal(size=p.value.shape)
        grads[name] = p.grad.copy()
    adam_step(store, TrainConfig(weight_decay=0.0, learning_rate=1e-3), 1)
    for name, v in store.snapshot().items():
        assert np.allclose(v - before[name], -1e-3 * np.sign(grads[name]), rtol=1e-6, atol=0), name
    assert all(not np.any(g) for g in store.gradients().values())


def test_decoupled_decay_only_on_weights():
    spec, store = _model()
    before = store.snapshot()
    adam_step(store, TrainConfig(weight_decay=0.1, learning_rate=1e-3), 1)
    for name, p in store.items():
        if p.kind == "weight":
            assert np.allclose(p.value, before[name] * (1 - 1e-4), rtol=1e-15, atol=0), name
        else:
            assert np.array_equal(p.value, before[name]), name


def test_coupled_decay_goes_through_adam():
    spec, store = _model()
    before = store["decoder.w1"].copy()
    adam_step(store, TrainConfig(weight_decay=0.1, weight_decay_mode="coupled", learning_rate=1e-3), 1)
    nz = before != 0
    assert np.allclose(store["decoder.w1"][nz] - before[nz], -1e-3 * np.sign(before[nz]), rtol=1e-4)


def _trace(losses, **kw):
    cfg = TrainConfig(**kw)
    state = TrainState(lr=cfg.learning_rate)
    lrs = []
    for v in losses:
        scheduler_step(state, v, cfg)
        lrs.append(state.lr)
    return state, lrs


def test_scheduler_halves_after_patience_exceeded():
    _, lrs = _trace([1.0, 1.0, 1.0, 1.0, 1.0])
    assert lrs == [1e-3, 1e-3, 1e-3, 1e-3, 5e-4]


def test_scheduler_two_plateaus_quarter_lr():
    state, lrs = _trace([1.0] + [1.0] * 8)
    assert lrs[-1] == 2.5e-4 and lrs.count(5e-4) == 4


def test_scheduler_keeps_lr_while_improving():
    state, lrs = _trace([1.0 / (i + 1) for i in range(30)])
    assert set(lrs) == {1e-3} and state.epochs_since_improvement == 0


def test_scheduler_ignores_sub_threshold_improvement():
    state, _ = _trace([1.0, 1.0 - 1e-9])
    assert state.best_val == 1.0 and state.plateau_count == 1


def test_early_stop_after_patience_and_restores():
    spec, store = _model()
    cfg = TrainConfig()
    state = TrainState(lr=1e-3)
    scheduler_step(state, 1.0, cfg)
    state.best_snapshot = store.snapshot()
    best = store.snapshot()
    store.set_value("decoder.b2", store["decoder.b2"] + 5)
    stops = []
    for _ in range(11):
        scheduler_step(state, 2.0, cfg)
        stops.append(early_stop_check(state, cfg, store))
    assert stops == [False] * 10 + [True]
    for k, v in store.snapshot().items():
        assert np.array_equal(v, best[k])


def test_train_restores_best_and_is_deterministic(sine_data):
    cfg = TrainConfig(window=16, horizon=4, proj_width=8, latent_width=8, max_epochs=6,
                      batch_size=16, learning_rate=3e-3)
    store, state, records, spec = engine.train(cfg, sine_data)
    assert evaluate_loss(sine_data.val, store, spec) == state.best_val
    assert state.best_val == min(r["val_mse"] for r in records)
    store2, _, records2, _ = engine.train(cfg, sine_data)
    assert records == records2
    for k, v in store.snapshot().items():
        assert np.array_equal(v, store2[k])
    assert all(0.05 <= r["gate_value"] <= 0.95 for r in records)
    assert records[-1]["val_mse"] < records[0]["val_mse"]


@pytest.mark.parametrize("gate", ["classical", "classical_step"])
def test_classical_ablation_trains(sine_data, gate):
    cfg = TrainConfig(window=16, horizon=4, proj_width=8, latent_width=8, max_epochs=4,
                      batch_size=16, learning_rate=3e-3, gate=gate)
    _, state, records, _ = engine.train(cfg, sine_data)
    assert all(math.isfinite(r["val_mse"]) for r in records)
    assert state.best_val < records[0]["val_mse"]


def test_train_rejects_empty_splits(sine_data):
    import dataclasses
    empty = dataclasses.replace(sine_data, train=[])
    with pytest.raises(ValueError, match="training split"):
        engine.train(TrainConfig(window=16, horizon=4), empty)


@pytest.mark.parametrize("kw", [dict(gate="lstm"), dict(g_min=0.9, g_max=0.1), dict(dropout_p=1.0),
                                dict(learning_rate=0.0), dict(weight_decay_mode="l2")])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_predict_rejects_wrong_window():
    rng = np.random.default_rng(7)
    spec, store = _model()
    b = _batch(rng, _spec(window=6))
    with pytest.raises(ValueError, match="model expects"):
        engine.predict(b, store, spec)
