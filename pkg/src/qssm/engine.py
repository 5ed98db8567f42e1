"""Parameter ownership, forward/backward over batches and the training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qgate
from .ablation import classical_gate_backward, classical_gate_forward
from .backbone import BackboneParams, encode, encode_backward
from .data import PreparedData, WindowSample
from .decoder import DecoderParams, decode, decode_backward
from .errors import ContractViolation

log = logging.getLogger(__name__)

GATE_TYPES = ("quantum", "classical", "classical_step")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    weight_decay_mode: str = "decoupled"
    scheduler_factor: float = 0.5
    scheduler_patience: int = 3
    plateau_threshold: float = 1e-8
    early_stop_patience: int = 10
    max_epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    window: int = 96
    horizon: int = 96
    proj_width: int = 128
    latent_width: int = 128
    dropout_p: float = 0.1
    g_min: float = 0.05
    g_max: float = 0.95
    gate: str = "quantum"

    def __post_init__(self):
        if self.gate not in GATE_TYPES:
            raise ValueError(f"gate must be one of {GATE_TYPES}, got {self.gate!r}")
        if self.weight_decay_mode not in ("decoupled", "coupled"):
            raise ValueError("weight_decay_mode must be 'decoupled' or 'coupled'")
        for name in ("learning_rate", "scheduler_factor", "max_epochs", "batch_size",
                     "window", "horizon", "proj_width", "latent_width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or self.scheduler_patience < 0 or self.early_stop_patience < 0:
            raise ValueError("weight decay and patience values must be non-negative")
        if not 0.0 < self.g_min < self.g_max < 1.0:
            raise ValueError("need 0 < g_min < g_max < 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")


@dataclass(frozen=True)
class ModelSpec:
    n_in: int
    n_out: int
    window: int
    horizon: int
    proj_width: int = 128
    latent_width: int = 128
    calendar_indices: tuple = ()
    gate: str = "quantum"
    dropout_p: float = 0.1
    g_min: float = 0.05
    g_max: float = 0.95

    @classmethod
    def from_config(cls, config: TrainConfig, n_in: int, n_out: int, calendar_indices=()) -> "ModelSpec":
        return cls(n_in=n_in, n_out=n_out, window=config.window, horizon=config.horizon,
                   proj_width=config.proj_width, latent_width=config.latent_width,
                   calendar_indices=tuple(calendar_indices), gate=config.gate,
                   dropout_p=config.dropout_p, g_min=config.g_min, g_max=config.g_max)


@dataclass
class Parameter:
    value: np.ndarray
    kind: str  # weight | bias | ln_gamma | ln_beta | alpha | angle | mixer | gate_weight
    grad: np.ndarray = None
    m: np.ndarray = None
    v: np.ndarray = None
    trainable: bool = True

    def __post_init__(self):
        self.value = np.array(self.value, dtype=float)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def decays(self) -> bool:
        return self.kind == "weight"


class ParameterStore:
    """Flat name -> Parameter registry.

    ``version`` increases whenever values change so stale forward caches can
    be detected.
    """

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self.version = 0

    def register(self, name: str, value, kind: str) -> Parameter:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        p = Parameter(value, kind)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name].value

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def param(self, name: str) -> Parameter:
        return self._params[name]

    def items(self):
        return self._params.items()

    def set_value(self, name: str, value):
        p = self._params[name]
        value = np.asarray(value, dtype=float)
        if value.shape != p.value.shape:
            raise ValueError(f"{name}: shape {value.shape} != {p.value.shape}")
        p.value[...] = value
        self.touch()

    def touch(self):
        self.version += 1

    def zero_grad(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def accumulate(self, prefix: str, grads: dict):
        for k, g in grads.items():
            self._params[f"{prefix}.{k}"].grad += g

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for k, v in snap.items():
            self._params[k].value[...] = v
        self.touch()

    def gradients(self) -> dict[str, np.ndarray]:
        return {k: p.grad.copy() for k, p in self._params.items()}


def build_store(spec: ModelSpec) -> ParameterStore:
    """Register every parameter with zero values; call :func:`kaiming_init` next."""
    s = ParameterStore()
    k, d, flat = spec.proj_width, spec.latent_width, spec.horizon * spec.n_out
    if spec.gate == "quantum":
        for name in qgate.ANGLES:
            s.register(f"gate.{name}", 0.0, "angle")
        s.register("gate.w1", 0.0, "mixer")
        s.register("gate.w2", 0.0, "mixer")
        s.register("gate.b_g", 0.0, "bias")
    else:
        s.register("cgate.weight", np.zeros(spec.n_in), "gate_weight")
        s.register("cgate.bias", 0.0, "bias")
    s.register("backbone.proj_weight", np.zeros((k, spec.n_in)), "weight")
    s.register("backbone.proj_bias", np.zeros(k), "bias")
    s.register("backbone.latent_weight", np.zeros((d, k)), "weight")
    s.register("backbone.bias", np.zeros(d), "bias")
    s.register("backbone.alpha", 0.0, "alpha")
    s.register("backbone.ln_gamma", np.ones(d), "ln_gamma")
    s.register("backbone.ln_beta", np.zeros(d), "ln_beta")
    s.register("decoder.w1", np.zeros((d, d)), "weight")
    s.register("decoder.b1", np.zeros(d), "bias")
    s.register("decoder.w2", np.zeros((flat, d)), "weight")
    s.register("decoder.b2", np.zeros(flat), "bias")
    return s


def kaiming_init(store: ParameterStore, rng: np.random.Generator):
    """He-normal weights, zero biases, identity LN, and a gate that starts at exactly 0.5."""
    for name, p in store.items():
        if p.kind == "weight":
            fan_in = p.value.shape[1]
            p.value[...] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=p.value.shape)
        elif p.kind == "ln_gamma":
            p.value[...] = 1.0
        elif p.kind == "angle":
            p.value[...] = math.pi / 2
        elif p.kind == "mixer":
            p.value[...] = 0.01
        else:
            p.value[...] = 0.0
    store.touch()


def gate_params(store: ParameterStore, spec: ModelSpec) -> qgate.GateParams:
    return qgate.GateParams(**{f: float(store[f"gate.{f}"]) for f in qgate.GATE_FIELDS},
                            g_min=spec.g_min, g_max=spec.g_max)


def backbone_params(store: ParameterStore) -> BackboneParams:
    return BackboneParams(**{f: store[f"backbone.{f}"] for f in (
        "proj_weight", "proj_bias", "latent_weight", "bias", "alpha", "ln_gamma", "ln_beta")})


def decoder_params(store: ParameterStore, spec: ModelSpec) -> DecoderParams:
    return DecoderParams(w1=store["decoder.w1"], b1=store["decoder.b1"], w2=store["decoder.w2"],
                         b2=store["decoder.b2"], horizon=spec.horizon, n_out=spec.n_out,
                         dropout_p=spec.dropout_p)


@dataclass
class Batch:
    x: np.ndarray  # (B, W, F_in)
    y: np.ndarray  # (B, H, F_out)
    x_last: np.ndarray  # (B, F_out)

    @classmethod
    def from_samples(cls, samples: Sequence[WindowSample]) -> "Batch":
        if len(samples) == 0:
            raise ValueError("batch is empty")
        shapes = {(s.X.shape, s.Y.shape) for s in samples}
        if len(shapes) != 1:
            raise ValueError(f"samples in a batch must share shapes, got {sorted(shapes)}")
        return cls(x=np.stack([s.X for s in samples]), y=np.stack([s.Y for s in samples]),
                   x_last=np.stack([s.x_last for s in samples]))

    def __len__(self):
        return self.x.shape[0]


def as_batch(batch) -> Batch:
    return batch if isinstance(batch, Batch) else Batch.from_samples(batch)


@dataclass
class ForwardCache:
    batch: Batch
    spec: ModelSpec
    gate_out: object  # GateOutput or ClassicalGateCache
    g: object
    enc: object
    dec: object
    forecast: np.ndarray
    version: int
    consumed: bool = False


def compute_gate(store: ParameterStore, spec: ModelSpec, x: np.ndarray):
    """Return ``(g, gate_cache)``; g is a scalar for the quantum gate."""
    if spec.gate == "quantum":
        out = qgate.gate_forward(gate_params(store, spec))
        return out.g, out
    return classical_gate_forward(x, store["cgate.weight"], store["cgate.bias"], spec.g_min,
                                  spec.g_max, per_step=spec.gate == "classical_step")


def predict(batch, store: ParameterStore, spec: ModelSpec, mode: str = "eval",
            rng: np.random.Generator | None = None):
    batch = as_batch(batch)
    if batch.x.shape[1:] != (spec.window, spec.n_in):
        raise ValueError(f"windows have shape {batch.x.shape[1:]}, model expects "
                         f"{(spec.window, spec.n_in)}")
    if batch.x_last.shape[1] != spec.n_out:
        raise ValueError(f"targets have {batch.x_last.shape[1]} features, model expects {spec.n_out}")
    g, gate_cache = compute_gate(store, spec, batch.x)
    h, enc = encode(batch.x, g, backbone_params(store), spec.calendar_indices)
    y, dec = decode(h, batch.x_last, decoder_params(store, spec), mode, rng)
    return y, ForwardCache(batch=batch, spec=spec, gate_out=gate_cache, g=g, enc=enc, dec=dec,
                           forecast=y, version=store.version)


def forward_loss(batch, store: ParameterStore, spec: ModelSpec, mode: str = "eval",
                 rng: np.random.Generator | None = None):
    """Mean squared error over batch, horizon and features, plus the cache for :func:`backward`."""
    batch = as_batch(batch)
    y, cache = predict(batch, store, spec, mode, rng)
    if batch.y.shape != y.shape:
        raise ValueError(f"targets have shape {batch.y.shape}, forecast {y.shape}")
    loss = float(np.mean((y - batch.y) ** 2))
    return loss, cache


def backward(cache: ForwardCache, store: ParameterStore):
    """Accumulate dLoss/dparam for every trainable into ``store``."""
    if cache.consumed or cache.version != store.version:
        raise ContractViolation("forward cache is stale; run forward_loss again")
    cache.consumed = True
    spec = cache.spec
    dy = 2.0 * (cache.forecast - cache.batch.y) / cache.forecast.size

    dec_grads, dh = decode_backward(cache.dec, decoder_params(store, spec), dy)
    store.accumulate("decoder", dec_grads)
    bb_grads, dg, _ = encode_backward(cache.enc, backbone_params(store), dh)
    store.accumulate("backbone", bb_grads)

    if spec.gate == "quantum":
        # one gate shared by all windows and steps: its gradient is the total
        gate_grads = qgate.gate_backward(cache.gate_out, gate_params(store, spec), float(np.sum(dg)))
        store.accumulate("gate", gate_grads)
    else:
        store.accumulate("cgate", classical_gate_backward(cache.gate_out, dg))


def adam_step(store: ParameterStore, config: TrainConfig, step_index: int, lr: float | None = None):
    """One Adam update (t = step_index >= 1) with weight decay on weight matrices; clears grads."""
    lr = config.learning_rate if lr is None else lr
    b1c = 1.0 - ADAM_BETA1 ** step_index
    b2c = 1.0 - ADAM_BETA2 ** step_index
    for p in store._params.values():
        if not p.trainable:
            continue
        grad = p.grad
        if p.decays and config.weight_decay:
            if config.weight_decay_mode == "decoupled":
                p.value *= 1.0 - lr * config.weight_decay
            else:
                grad = grad + config.weight_decay * p.value
        p.m[...] = ADAM_BETA1 * p.m + (1 - ADAM_BETA1) * grad
        p.v[...] = ADAM_BETA2 * p.v + (1 - ADAM_BETA2) * grad * grad
        p.value -= lr * (p.m / b1c) / (np.sqrt(p.v / b2c) + ADAM_EPS)
    store.zero_grad()
    store.touch()


@dataclass
class TrainState:
    lr: float
    epoch: int = 0
    best_val: float = math.inf
    epochs_since_improvement: int = 0
    plateau_count: int = 0
    best_snapshot: dict | None = None
    best_epoch: int = 0
    history: list = field(default_factory=list)


def scheduler_step(state: TrainState, val_loss: float, config: TrainConfig) -> bool:
    """Plateau bookkeeping; halves (by ``scheduler_factor``) the lr after a long plateau.

    Returns True when ``val_loss`` is a new best.
    """
    if val_loss < state.best_val - config.plateau_threshold:
        state.best_val = val_loss
        state.plateau_count = 0
        state.epochs_since_improvement = 0
        return True
    state.plateau_count += 1
    state.epochs_since_improvement += 1
    if state.plateau_count > config.scheduler_patience:
        state.lr *= config.scheduler_factor
        state.plateau_count = 0
    return False


def early_stop_check(state: TrainState, config: TrainConfig, store: ParameterStore | None = None) -> bool:
    if state.epochs_since_improvement <= config.early_stop_patience:
        return False
    if store is not None and state.best_snapshot is not None:
        store.restore(state.best_snapshot)
    return True


def evaluate_loss(samples, store: ParameterStore, spec: ModelSpec, chunk: int = 256) -> float:
    """Eval-mode MSE over a list of windows, accumulated in a fixed chunk order."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate an empty split")
    total = 0.0
    for i in range(0, len(samples), chunk):
        part = samples[i:i + chunk]
        y, _ = predict(part, store, spec, "eval")
        total += float(np.sum((y - np.stack([s.Y for s in part])) ** 2))
    return total / (len(samples) * spec.horizon * spec.n_out)


def gate_value(store: ParameterStore, spec: ModelSpec, samples=None) -> float:
    """Current gate; for classical gates the mean over ``samples``."""
    if spec.gate == "quantum":
        return qgate.gate_forward(gate_params(store, spec)).g
    x = np.stack([s.X for s in samples])
    g, _ = compute_gate(store, spec, x)
    return float(np.mean(g))


def _check_gate(store, spec, samples):
    g = gate_value(store, spec, samples)
    if not spec.g_min <= g <= spec.g_max:
        raise ContractViolation(f"gate value {g} left [{spec.g_min}, {spec.g_max}]")
    return g


def train(config: TrainConfig, data: PreparedData, on_epoch=None):
    """Full optimisation loop; returns ``(store, state, log_records, spec)``.

    The returned store holds the parameters with the best validation loss.
    """
    if len(data.train) == 0:
        raise ValueError("training split has no windows")
    if len(data.val) == 0:
        raise ValueError("validation split has no windows")
    spec = ModelSpec.from_config(config, data.n_in, len(data.target_indices), data.calendar_indices)
    init_ss, shuffle_ss, dropout_ss = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    store = build_store(spec)
    kaiming_init(store, np.random.default_rng(init_ss))
    state = TrainState(lr=config.learning_rate)
    records = []
    step_index = 0
    n = len(data.train)
    for epoch in range(1, config.max_epochs + 1):
        state.epoch = epoch
        order = shuffle_rng.permutation(n)
        sq_err = 0.0
        lr_used = state.lr
        for i in range(0, n, config.batch_size):
            batch = Batch.from_samples([data.train[j] for j in order[i:i + config.batch_size]])
            loss, cache = forward_loss(batch, store, spec, "train", dropout_rng)
            backward(cache, store)
            step_index += 1
            adam_step(store, config, step_index, state.lr)
            sq_err += loss * len(batch)
        train_mse = sq_err / n
        val_mse = evaluate_loss(data.val, store, spec)
        g = _check_gate(store, spec, data.val)
        if not math.isfinite(val_mse):
            raise FloatingPointError(f"validation loss diverged at epoch {epoch}")
        improved = scheduler_step(state, val_mse, config)
        if improved:
            state.best_snapshot = store.snapshot()
            state.best_epoch = epoch
        rec = {"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse, "lr": lr_used, "gate_value": g}
        records.append(rec)
        state.history.append(rec)
        log.info("epoch %d train %.6g val %.6g lr %.3g gate %.6f", epoch, train_mse, val_mse, lr_used, g)
        if on_epoch is not None:
            on_epoch(rec)
        if early_stop_check(state, config, store):
            log.info("early stop at epoch %d; best epoch %d", epoch, state.best_epoch)
            break
    else:
        if state.best_snapshot is not None:
            store.restore(state.best_snapshot)
    return store, state, records, spec
