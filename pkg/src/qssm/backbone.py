"""Gated linear recurrence over an input window.

    u_t = LN(W (P x_t + p_b) + b + alpha * c)
    h_t = (1 - g) h_{t-1} + g u_t,        h_0 = 0

``c`` is the mean of the calendar columns over the whole window. Every
function accepts a single window ``(W, F)`` or a batch ``(B, W, F)``; the
gate ``g`` may be a scalar, one value per window ``(B,)`` or one value per
step ``(B, W)``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

import numpy as np

from .errors import ContractViolation

LN_EPS = 1e-5


@dataclass
class BackboneParams:
    proj_weight: np.ndarray  # (k, F_in)
    proj_bias: np.ndarray  # (k,)
    latent_weight: np.ndarray  # (d, k)
    bias: np.ndarray  # (d,)
    alpha: float | np.ndarray
    ln_gamma: np.ndarray  # (d,)
    ln_beta: np.ndarray  # (d,)

    def __post_init__(self):
        k, f = np.shape(self.proj_weight)
        d, k2 = np.shape(self.latent_weight)
        if k2 != k or np.shape(self.proj_bias) != (k,):
            raise ValueError("projection shapes disagree on k")
        for name in ("bias", "ln_gamma", "ln_beta"):
            if np.shape(getattr(self, name)) != (d,):
                raise ValueError(f"{name} must have shape ({d},)")
        if np.ndim(self.alpha) != 0:
            raise ValueError("alpha must be a scalar")

    @property
    def n_in(self) -> int:
        return self.proj_weight.shape[1]

    @property
    def latent_width(self) -> int:
        return self.latent_weight.shape[0]

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for f in fields(self):
            h.update(np.ascontiguousarray(getattr(self, f.name), dtype=float).tobytes())
        return h.hexdigest()


@dataclass
class EncodeCache:
    x: np.ndarray  # (B, W, F_in)
    v: np.ndarray  # (B, W, k) projection output
    pre_ln: np.ndarray  # (B, W, d)
    xhat: np.ndarray  # (B, W, d) normalized, pre-affine
    ln_mean: np.ndarray  # (B, W)
    ln_var: np.ndarray  # (B, W)
    u: np.ndarray  # (B, W, d) post-LN
    h: np.ndarray  # (B, W + 1, d), h[:, 0] = 0
    g: np.ndarray  # (B, W)
    c: np.ndarray  # (B,)
    g_shape: tuple
    calendar_indices: tuple
    batched: bool
    fingerprint: str

    def __len__(self):
        return self.x.shape[1]


def calendar_scalar(window: np.ndarray, calendar_indices) -> float | np.ndarray:
    """Mean over all (step, calendar column) entries; 0 when there are none."""
    window = np.asarray(window, dtype=float)
    idx = list(calendar_indices)
    n_cols = window.shape[-1]
    for i in idx:
        if not -n_cols <= i < n_cols:
            raise ValueError(f"calendar column index {i} out of range for {n_cols} columns")
    if not idx:
        out = np.zeros(window.shape[:-2])
    else:
        out = window[..., idx].mean(axis=(-2, -1))
    return float(out) if np.ndim(out) == 0 else out


def _ln_forward(v, gamma, beta, eps=LN_EPS):
    mean = v.mean(axis=-1, keepdims=True)
    var = ((v - mean) ** 2).mean(axis=-1, keepdims=True)
    xhat = (v - mean) / np.sqrt(var + eps)
    return gamma * xhat + beta, xhat, mean[..., 0], var[..., 0]


def layer_norm(v, gamma, beta, eps: float = LN_EPS) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] < 2:
        raise ValueError("layer norm needs at least 2 features")
    return _ln_forward(v, gamma, beta, eps)[0]


def layer_norm_backward(dout, xhat, var, gamma, eps: float = LN_EPS):
    """Return (d input, d gamma, d beta); gamma/beta grads are summed over leading axes."""
    lead = tuple(range(dout.ndim - 1))
    dgamma = (dout * xhat).sum(axis=lead)
    dbeta = dout.sum(axis=lead)
    dxhat = dout * gamma
    inv_std = 1.0 / np.sqrt(var + eps)[..., None]
    dv = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dv, dgamma, dbeta


def _rows(a):
    return a.reshape(-1, a.shape[-1])


def _project(x, c, params: BackboneParams):
    # one 2-D product over all rows instead of a stack of small ones
    v = (_rows(x) @ params.proj_weight.T).reshape(*x.shape[:-1], -1) + params.proj_bias
    pre = (_rows(v) @ params.latent_weight.T).reshape(*v.shape[:-1], -1)
    pre += params.bias + params.alpha * np.asarray(c)[..., None]
    return v, pre


def step(h_prev, x_t, c, g, params: BackboneParams) -> np.ndarray:
    """One recurrence update. Inputs are not modified."""
    h_prev = np.asarray(h_prev, dtype=float)
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape[-1] != params.n_in:
        raise ValueError(f"x_t has {x_t.shape[-1]} features, expected {params.n_in}")
    if h_prev.shape[-1] != params.latent_width:
        raise ValueError(f"h_prev has width {h_prev.shape[-1]}, expected {params.latent_width}")
    if not np.all((0 < np.asarray(g)) & (np.asarray(g) < 1)):
        raise ValueError("gate value must lie in (0, 1)")
    _, pre = _project(x_t, c, params)
    u = _ln_forward(pre, params.ln_gamma, params.ln_beta)[0]
    g = np.asarray(g, dtype=float)[..., None] if np.ndim(g) else float(g)
    return (1.0 - g) * h_prev + g * u


def _gate_grid(g, batch: int, steps: int, batched: bool) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        return np.full((batch, steps), float(g))
    if not batched:
        # a single window takes either a scalar or one gate per step
        g = g.reshape(1, -1)
    if g.ndim == 1:
        if g.shape[0] != batch:
            raise ValueError(f"gate has {g.shape[0]} entries for a batch of {batch}")
        return np.repeat(g[:, None], steps, axis=1)
    if g.shape != (batch, steps):
        raise ValueError(f"per-step gate must have shape {(batch, steps)}, got {g.shape}")
    return g.copy()


def encode(window, g, params: BackboneParams, calendar_indices=()) -> tuple[np.ndarray, EncodeCache]:
    x = np.asarray(window, dtype=float)
    batched = x.ndim == 3
    if x.ndim not in (2, 3):
        raise ValueError("window must be (W, F) or (B, W, F)")
    if not batched:
        x = x[None]
    B, T, F = x.shape
    if T < 1:
        raise ValueError("window is empty")
    if F != params.n_in:
        raise ValueError(f"window has {F} features, expected {params.n_in}")
    g_in = np.asarray(g, dtype=float)
    g_grid = _gate_grid(g_in, B, T, batched)
    if np.any((g_grid <= 0) | (g_grid >= 1)):
        raise ValueError("gate value must lie in (0, 1)")

    c = np.atleast_1d(calendar_scalar(x, calendar_indices))
    v, pre = _project(x, c[:, None], params)
    u, xhat, mean, var = _ln_forward(pre, params.ln_gamma, params.ln_beta)

    d = params.latent_width
    h = np.zeros((B, T + 1, d))
    for t in range(T):
        gt = g_grid[:, t, None]
        h[:, t + 1] = (1.0 - gt) * h[:, t] + gt * u[:, t]

    cache = EncodeCache(
        x=x, v=v, pre_ln=pre, xhat=xhat, ln_mean=mean, ln_var=var, u=u, h=h,
        g=g_grid, c=c, g_shape=g_in.shape, calendar_indices=tuple(calendar_indices),
        batched=batched, fingerprint=params.fingerprint(),
    )
    h_last = h[:, -1].copy()
    return (h_last if batched else h_last[0]), cache


def encode_backward(cache: EncodeCache, params: BackboneParams, upstream):
    """Backpropagate dL/dh_W through every step.

    Returns ``(param_grads, gate_grad, input_grad)`` where ``gate_grad`` has
    the shape of the ``g`` passed to :func:`encode` and ``input_grad`` the
    shape of the window (calendar columns include the path through ``c``).
    """
    if cache.fingerprint != params.fingerprint():
        raise ContractViolation("encode cache was produced with different backbone parameters")
    dh = np.asarray(upstream, dtype=float)
    if not cache.batched:
        dh = dh[None]
    B, T, _ = cache.x.shape
    if dh.shape != (B, params.latent_width):
        raise ValueError(f"upstream must have shape {(B, params.latent_width)}")

    g = cache.g[..., None]
    # dL/dh_{t+1} for every step; only this carry is sequential
    dhs = np.empty_like(cache.u)
    dh = dh.copy()
    for t in range(T - 1, -1, -1):
        dhs[:, t] = dh
        dh = (1.0 - g[:, t]) * dh
    du = g * dhs
    dg = np.sum(dhs * (cache.u - cache.h[:, :T]), axis=-1)

    dpre, dgamma, dbeta = layer_norm_backward(du, cache.xhat, cache.ln_var, params.ln_gamma)
    dv = (_rows(dpre) @ params.latent_weight).reshape(*dpre.shape[:-1], -1)
    grads = {
        "latent_weight": _rows(dpre).T @ _rows(cache.v),
        "bias": dpre.sum(axis=(0, 1)),
        "alpha": np.asarray(dpre.sum(axis=(1, 2)) @ cache.c),
        "proj_weight": _rows(dv).T @ _rows(cache.x),
        "proj_bias": dv.sum(axis=(0, 1)),
        "ln_gamma": dgamma,
        "ln_beta": dbeta,
    }

    dx = (_rows(dv) @ params.proj_weight).reshape(cache.x.shape)
    cal = list(cache.calendar_indices)
    if cal:
        dc = params.alpha * dpre.sum(axis=(1, 2))
        dx[..., cal] += (dc / (T * len(cal)))[:, None, None]

    if len(cache.g_shape) == 0:
        dg_out = np.asarray(dg.sum())
    elif cache.batched and len(cache.g_shape) == 1:
        dg_out = dg.sum(axis=1)
    else:
        dg_out = dg if cache.batched else dg[0]
    return grads, dg_out, (dx if cache.batched else dx[0])
