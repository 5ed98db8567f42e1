"""Classical sigmoid gate used to ablate the quantum pre-activation.

``window_mean`` mode feeds the window mean and yields one gate per window,
which keeps the gate constant over time just like the quantum gate.
``per_step`` mode evaluates the gate on every row of the window.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qgate import sigmoid


@dataclass
class ClassicalGateCache:
    inputs: np.ndarray  # (B, F_in) window means, or (B, W, F_in) rows
    sigma: np.ndarray
    active: np.ndarray  # True where the clamp is not saturated


def classical_gate_ablation(x_mean, w, b, g_min: float = 0.05, g_max: float = 0.95):
    """g = clamp(sigmoid(w . x_mean + b), g_min, g_max)."""
    x_mean = np.asarray(x_mean, dtype=float)
    w = np.asarray(w, dtype=float)
    if x_mean.shape[-1] != w.shape[0]:
        raise ValueError(f"gate weight has {w.shape[0]} entries, input has {x_mean.shape[-1]}")
    sig = sigmoid(x_mean @ w + float(b))
    g = np.clip(sig, g_min, g_max)
    return float(g) if np.ndim(g) == 0 else g


def classical_gate_forward(x, w, b, g_min, g_max, per_step: bool = False):
    """Gate values for a batch of windows ``x`` (B, W, F_in).

    Returns ``(g, cache)`` with ``g`` of shape (B,) or (B, W) when ``per_step``.
    """
    inputs = x if per_step else x.mean(axis=1)
    sig = np.atleast_1d(sigmoid(inputs @ w + float(b)))
    g = np.clip(sig, g_min, g_max)
    active = (sig >= g_min) & (sig <= g_max)
    return g, ClassicalGateCache(inputs=inputs, sigma=sig, active=active)


def classical_gate_backward(cache: ClassicalGateCache, upstream) -> dict[str, np.ndarray]:
    ds = np.asarray(upstream, dtype=float) * cache.sigma * (1.0 - cache.sigma) * cache.active
    lead = tuple(range(ds.ndim))
    return {
        "weight": np.tensordot(ds, cache.inputs, axes=(lead, lead)),
        "bias": np.asarray(ds.sum()),
    }
