import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qssm import engine
from qssm.ablation import classical_gate_backward, classical_gate_forward
from qssm.backbone import encode
from qssm.data import WindowSample
from qssm.decoder import decode
from qssm.evaluation import (ForecastReport, batch_metrics, classical_gate_ablation, evaluate,
                             evaluate_naive, mae, mse, naive_last_value)
from qssm.gradcheck import central_difference, relative_error, tiny_model


def test_metric_examples():
    assert mse([[1.0, 2.0]], [[0.0, 4.0]]) == 2.5
    assert mae([[1.0, 2.0]], [[0.0, 4.0]]) == 1.5
    with pytest.raises(ValueError, match="shape"):
        mse(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        mae(np.zeros(3), np.zeros(4))


@settings(max_examples=100)
@given(st.integers(0, 10_000))
def test_mae_bounded_by_rmse(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(5, 3, 2)), rng.normal(size=(5, 3, 2))
    assert mae(a, b) <= np.sqrt(mse(a, b)) + 1e-15
    m_se, m_ae = batch_metrics(a, b)
    assert m_se == pytest.approx(mse(a, b), rel=1e-14) and m_ae == pytest.approx(mae(a, b), rel=1e-14)


def test_naive_baseline():
    s = WindowSample(X=np.zeros((4, 2)), Y=np.ones((3, 2)), x_last=np.array([1.0, 5.0]))
    assert np.array_equal(naive_last_value(s), [[1, 5], [1, 5], [1, 5]])
    flat = [WindowSample(X=np.full((4, 1), 2.0), Y=np.full((3, 1), 2.0), x_last=np.array([2.0]))] * 3
    rep = evaluate_naive(flat)
    assert rep.mse == 0 and rep.mae == 0 and rep.n == 3 and rep.H == 3


def test_zero_decoder_equals_naive():
    spec, store, samples = tiny_model(seed=1)
    for name in ("decoder.w1", "decoder.b1", "decoder.w2", "decoder.b2"):
        store.set_value(name, np.zeros_like(store[name]))
    model = evaluate(store, samples, spec)
    naive = evaluate_naive(samples)
    assert model.mse == naive.mse and model.mae == naive.mae


def test_evaluate_permutation_invariant_and_empty():
    spec, store, samples = tiny_model(seed=2, n_samples=6)
    a = evaluate(store, samples, spec, dataset="d", seed=3, config_hash="h")
    b = evaluate(store, samples[::-1], spec, dataset="d", seed=3, config_hash="h")
    assert a.mse == pytest.approx(b.mse, rel=1e-14) and a.mae == pytest.approx(b.mae, rel=1e-14)
    assert a.H == spec.horizon and a.n == 6 and a.dataset == "d"
    with pytest.raises(ValueError, match="no windows"):
        evaluate(store, [], spec)


def test_classical_gate_examples():
    assert classical_gate_ablation(np.ones(3), np.zeros(3), 0.0) == 0.5
    assert classical_gate_ablation(np.ones(2), np.array([50.0, 50.0]), 0.0) == 0.95
    assert classical_gate_ablation(np.ones(2), np.array([-50.0, -50.0]), 0.0) == 0.05
    with pytest.raises(ValueError):
        classical_gate_ablation(np.ones(2), np.zeros(3), 0.0)


@pytest.mark.parametrize("per_step", [False, True])
def test_classical_gate_backward_matches_finite_differences(per_step):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 4, 2))
    w, b = rng.normal(size=2), np.array(0.3)
    g, cache = classical_gate_forward(x, w, b, 0.05, 0.95, per_step)
    up = rng.normal(size=g.shape)
    grads = classical_gate_backward(cache, up)

    def f():
        return float(np.sum(classical_gate_forward(x, w, b, 0.05, 0.95, per_step)[0] * up))

    assert relative_error(grads["weight"], central_difference(f, w), 0.1) < 1e-8
    assert relative_error(grads["bias"], central_difference(f, b), 0.1) < 1e-8


def test_classical_gate_clipped_has_no_gradient():
    x = np.ones((2, 3, 1))
    g, cache = classical_gate_forward(x, np.array([100.0]), 0.0, 0.05, 0.95)
    assert np.all(g == 0.95)
    grads = classical_gate_backward(cache, np.ones(2))
    assert not np.any(grads["weight"]) and grads["bias"] == 0


def test_gates_at_half_give_identical_caches():
    # the two models differ only in how g is produced
    spec_q, store_q, samples = tiny_model(seed=4)
    for name in ("gate.theta1", "gate.phi1", "gate.theta2", "gate.phi2"):
        store_q.set_value(name, np.pi / 2)
    store_q.set_value("gate.b_g", 0.0)
    # small mixers absorb the cos(pi/2) roundoff, as at initialisation
    store_q.set_value("gate.w1", 0.01)
    store_q.set_value("gate.w2", 0.01)
    spec_c = engine.ModelSpec(**{**spec_q.__dict__, "gate": "classical"})
    store_c = engine.build_store(spec_c)
    for name, p in store_q.items():
        if name in store_c:
            store_c.set_value(name, p.value)
    _, cq = engine.predict(samples, store_q, spec_q)
    _, cc = engine.predict(samples, store_c, spec_c)
    assert cq.g == 0.5 and np.all(cc.g == 0.5)
    for field in ("pre_ln", "u", "h"):
        assert np.array_equal(getattr(cq.enc, field), getattr(cc.enc, field)), field
    assert np.array_equal(cq.forecast, cc.forecast)
    # sanity: the same numbers come out of the components directly
    h, _ = encode(cq.batch.x, 0.5, engine.backbone_params(store_q), spec_q.calendar_indices)
    y, _ = decode(h, cq.batch.x_last, engine.decoder_params(store_q, spec_q))
    assert np.array_equal(y, cq.forecast)


def test_report_round_trip_and_csv():
    r = ForecastReport(dataset="ETTh1", H=96, split="test", mse=0.123456789012345, mae=0.25, n=10,
                       seed=0, config_hash="abcd", seconds=1.5)
    assert ForecastReport.from_json(r.to_json()) == r
    lines = r.to_csv().splitlines()
    assert lines[0] == "dataset,H,split,mse,mae,n,seed,config_hash,seconds"
    assert lines[1].split(",")[3] == repr(0.123456789012345)
    with pytest.raises(ValueError, match="schema"):
        ForecastReport.from_json('{"schema": "other"}')
    with pytest.raises(ValueError):
        ForecastReport(dataset="", H=1, split="t", mse=-1.0, mae=0.0, n=1, seed=0, config_hash="", seconds=0)
