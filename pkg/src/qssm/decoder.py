"""Residual MLP head: hidden state -> H x F_out forecast around the last observation."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass
class DecoderParams:
    w1: np.ndarray  # (d, d)
    b1: np.ndarray  # (d,)
    w2: np.ndarray  # (H * F_out, d)
    b2: np.ndarray  # (H * F_out,)
    horizon: int
    n_out: int
    dropout_p: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        d = np.shape(self.w1)[0]
        flat = self.horizon * self.n_out
        if np.shape(self.w1) != (d, d) or np.shape(self.b1) != (d,):
            raise ValueError("w1/b1 shapes disagree with latent width")
        if np.shape(self.w2) != (flat, d) or np.shape(self.b2) != (flat,):
            raise ValueError(f"w2/b2 must map {d} -> {self.horizon}x{self.n_out}")

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for a in (self.w1, self.b1, self.w2, self.b2):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        return h.hexdigest()


@dataclass
class DecodeCache:
    h: np.ndarray  # (B, d)
    pre_relu: np.ndarray  # (B, d)
    z: np.ndarray  # (B, d) after ReLU
    mask: np.ndarray | None  # (B, d) inverted-dropout scale (0 or 1/(1-p)); None in eval mode
    z_drop: np.ndarray  # (B, d)
    batched: bool
    fingerprint: str


def flatten_forecast(y: np.ndarray) -> np.ndarray:
    """Inverse of the row-major reshape used by :func:`decode`."""
    return np.asarray(y).reshape(*np.shape(y)[:-2], -1)


def decode(h, x_last, params: DecoderParams, mode: str = "eval", rng: np.random.Generator | None = None):
    """Return ``(forecast, cache)``; forecast rows are horizon steps.

    In ``train`` mode the dropout mask is drawn from ``rng``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    h = np.asarray(h, dtype=float)
    x_last = np.asarray(x_last, dtype=float)
    batched = h.ndim == 2
    if not batched:
        h, x_last = h[None], x_last[None]
    d = params.w1.shape[0]
    if h.shape[-1] != d:
        raise ValueError(f"hidden state has width {h.shape[-1]}, decoder expects {d}")
    if x_last.shape != (h.shape[0], params.n_out):
        raise ValueError(f"last observation must have {params.n_out} features")

    pre = h @ params.w1.T + params.b1
    z = np.maximum(pre, 0.0)
    mask = None
    if mode == "train" and params.dropout_p > 0:
        if rng is None:
            raise ValueError("train mode with dropout needs a random generator")
        keep = rng.random(z.shape) >= params.dropout_p
        mask = keep / (1.0 - params.dropout_p)
        z_drop = z * mask
    else:
        z_drop = z
    flat = z_drop @ params.w2.T + params.b2
    y = flat.reshape(h.shape[0], params.horizon, params.n_out) + x_last[:, None, :]

    cache = DecodeCache(h=h, pre_relu=pre, z=z, mask=mask, z_drop=z_drop,
                        batched=batched, fingerprint=params.fingerprint())
    return (y if batched else y[0]), cache


def decode_backward(cache: DecodeCache, params: DecoderParams, upstream):
    """Return ``(param_grads, grad_h)`` by reversing :func:`decode` with the cached mask."""
    if cache.fingerprint != params.fingerprint():
        raise ContractViolation("decode cache was produced with different decoder parameters")
    dy = np.asarray(upstream, dtype=float)
    if not cache.batched:
        dy = dy[None]
    B = cache.h.shape[0]
    if dy.shape != (B, params.horizon, params.n_out):
        raise ValueError(f"upstream must have shape {(B, params.horizon, params.n_out)}")

    dflat = dy.reshape(B, -1)
    grads = {"w2": dflat.T @ cache.z_drop, "b2": dflat.sum(axis=0)}
    dz = dflat @ params.w2
    if cache.mask is not None:
        dz = dz * cache.mask
    dpre = dz * (cache.pre_relu > 0)
    grads["w1"] = dpre.T @ cache.h
    grads["b1"] = dpre.sum(axis=0)
    dh = dpre @ params.w1
    return grads, (dh if cache.batched else dh[0])
