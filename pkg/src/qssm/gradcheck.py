"""Finite-difference and parameter-shift cross-checks of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine, qgate
from .backbone import encode_backward
from .data import WindowSample
from .decoder import decode_backward

FD_STEP = 1e-6
# below this magnitude entries are compared absolutely (tol * floor)
REL_FLOOR = 1e-2


def central_difference(f, x: np.ndarray, eps: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        grad[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def tiny_model(seed: int = 0, gate: str = "quantum", dropout_p: float = 0.0, n_samples: int = 3):
    """Random model with F_in=3 (last column calendar), k=d=4, W=4, H=2, F_out=2."""
    rng = np.random.default_rng(seed)
    spec = engine.ModelSpec(n_in=3, n_out=2, window=4, horizon=2, proj_width=4, latent_width=4,
                            calendar_indices=(2,), gate=gate, dropout_p=dropout_p)
    store = engine.build_store(spec)
    engine.kaiming_init(store, rng)
    for name, p in store.items():
        if p.kind == "angle":
            p.value[...] = rng.uniform(-np.pi, np.pi)
        elif p.kind == "mixer":
            p.value[...] = rng.uniform(-2, 2)
        else:
            p.value[...] += rng.normal(0.0, 0.3, p.value.shape)
    store.touch()
    samples = []
    for _ in range(n_samples):
        X = rng.normal(size=(4, 3))
        samples.append(WindowSample(X=X, Y=np.zeros((2, 2)), x_last=X[-1, :2]))
    # targets near the model's own forecast keep the loss O(0.1) and with it the
    # finite-difference roundoff
    forecast, _ = engine.predict(samples, store, spec, "eval")
    for s, y in zip(samples, forecast):
        s.Y = y + rng.normal(0.0, 0.5, y.shape)
    return spec, store, samples


@dataclass
class GradcheckResult:
    fd_errors: dict[str, float]
    shift_errors: dict[str, float]
    tol: float

    @property
    def failures(self) -> list[str]:
        bad = [n for n, e in self.fd_errors.items() if not e < self.tol]
        bad += [f"{n} (parameter shift)" for n, e in self.shift_errors.items() if not e < self.tol]
        return bad

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def max_fd_error(self) -> float:
        return max(self.fd_errors.values())


def check_model(spec, store, samples, tol: float = 1e-7, eps: float = FD_STEP) -> GradcheckResult:
    """Compare backward() with central differences of forward_loss for every parameter."""
    if spec.dropout_p > 0:
        raise ValueError("gradient check needs a deterministic forward pass; set dropout_p = 0")
    store.zero_grad()
    _, cache = engine.forward_loss(samples, store, spec, "eval")
    engine.backward(cache, store)
    analytic = store.gradients()
    store.zero_grad()

    def loss():
        return engine.forward_loss(samples, store, spec, "eval")[0]

    fd_errors = {}
    for name, p in store.items():
        numeric = central_difference(loss, p.value, eps)
        fd_errors[name] = relative_error(analytic[name], numeric)

    shift_errors = {}
    if spec.gate == "quantum":
        gp = engine.gate_params(store, spec)
        dg = engine_gate_upstream(samples, store, spec)
        shifted = qgate.param_shift_gate_grad(gp, dg)
        for a in qgate.ANGLES:
            shift_errors[f"gate.{a}"] = relative_error(analytic[f"gate.{a}"], shifted[a])
    store.touch()
    return GradcheckResult(fd_errors, shift_errors, tol)


def engine_gate_upstream(samples, store, spec) -> float:
    """dLoss/dg for the shared quantum gate, via the backbone and decoder backward passes."""
    _, cache = engine.forward_loss(samples, store, spec, "eval")
    dy = 2.0 * (cache.forecast - cache.batch.y) / cache.forecast.size
    _, dh = decode_backward(cache.dec, engine.decoder_params(store, spec), dy)
    _, dg, _ = encode_backward(cache.enc, engine.backbone_params(store), dh)
    return float(np.sum(dg))


def run_gradcheck(seed: int = 0, gates=("quantum", "classical"), dropout_p: float = 0.0,
                  tol: float = 1e-7) -> dict[str, GradcheckResult]:
    out = {}
    for gate in gates:
        spec, store, samples = tiny_model(seed, gate, dropout_p)
        out[gate] = check_model(spec, store, samples, tol)
    return out
