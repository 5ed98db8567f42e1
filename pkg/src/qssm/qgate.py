"""Single-qubit variational gate.

Each of the two circuits prepares RX(phi) RY(theta) |0> and measures <Z>.
The two expectations are mixed linearly, squashed by a sigmoid and clamped
into [g_min, g_max]. Gradients are available three ways: the analytic chain
rule (used for training), the parameter-shift rule and finite differences
(both used as oracles in tests and gradcheck).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import cos, exp, isfinite, sin

import numpy as np

from .errors import ContractViolation

ANGLES = ("theta1", "phi1", "theta2", "phi2")
GATE_FIELDS = ANGLES + ("w1", "w2", "b_g")

_NORM_TOL = 1e-9


def ry(theta) -> np.ndarray:
    c, s = np.cos(np.asarray(theta) / 2), np.sin(np.asarray(theta) / 2)
    m = np.empty(np.shape(theta) + (2, 2), dtype=complex)
    m[..., 0, 0], m[..., 0, 1] = c, -s
    m[..., 1, 0], m[..., 1, 1] = s, c
    return m


def rx(phi) -> np.ndarray:
    c, s = np.cos(np.asarray(phi) / 2), np.sin(np.asarray(phi) / 2)
    m = np.empty(np.shape(phi) + (2, 2), dtype=complex)
    m[..., 0, 0], m[..., 0, 1] = c, -1j * s
    m[..., 1, 0], m[..., 1, 1] = -1j * s, c
    return m


@dataclass(frozen=True)
class QubitState:
    amp0: complex | np.ndarray
    amp1: complex | np.ndarray

    def norm(self):
        return np.sqrt(np.abs(self.amp0) ** 2 + np.abs(self.amp1) ** 2)


def prepare_state(theta, phi) -> QubitState:
    """Return RX(phi) RY(theta) |0>. Angles may be scalars or broadcastable arrays."""
    if np.ndim(theta) == 0 and np.ndim(phi) == 0:
        theta, phi = float(theta), float(phi)
        if not (isfinite(theta) and isfinite(phi)):
            raise ValueError("rotation angles must be finite")
        # same product as the matrix path, written out for one qubit
        ct, st = cos(theta / 2), sin(theta / 2)
        cp, sp = cos(phi / 2), sin(phi / 2)
        return QubitState(complex(cp * ct, -sp * st), complex(cp * st, -sp * ct))
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(phi))):
        raise ValueError("rotation angles must be finite")
    theta, phi = np.broadcast_arrays(theta, phi)
    ket0 = np.zeros(theta.shape + (2,), dtype=complex)
    ket0[..., 0] = 1.0
    psi = np.einsum("...ij,...j->...i", ry(theta), ket0)
    psi = np.einsum("...ij,...j->...i", rx(phi), psi)
    if psi.ndim == 1:
        return QubitState(complex(psi[0]), complex(psi[1]))
    return QubitState(psi[..., 0], psi[..., 1])


def expect_z(state: QubitState):
    """<Z> = |amp0|^2 - |amp1|^2 for a normalized state."""
    if isinstance(state.amp0, complex) and isinstance(state.amp1, complex):
        p0 = state.amp0.real ** 2 + state.amp0.imag ** 2
        p1 = state.amp1.real ** 2 + state.amp1.imag ** 2
        if abs(p0 + p1 - 1.0) > _NORM_TOL:
            raise ContractViolation("qubit state is not normalized")
        return p0 - p1
    p0 = np.abs(state.amp0) ** 2
    p1 = np.abs(state.amp1) ** 2
    if np.any(np.abs(p0 + p1 - 1.0) > _NORM_TOL):
        raise ContractViolation("qubit state is not normalized")
    z = p0 - p1
    return float(z) if np.ndim(z) == 0 else z


def circuit_z(theta, phi):
    return expect_z(prepare_state(theta, phi))


def dz_dtheta(theta, phi):
    return -np.sin(theta) * np.cos(phi)


def dz_dphi(theta, phi):
    return -np.cos(theta) * np.sin(phi)


def sigmoid(x):
    if isinstance(x, (float, int)):
        if x >= 0:
            return 1.0 / (1.0 + exp(-x))
        ex = exp(x)
        return ex / (1.0 + ex)
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GateParams:
    theta1: float
    phi1: float
    theta2: float
    phi2: float
    w1: float
    w2: float
    b_g: float
    g_min: float = 0.05
    g_max: float = 0.95

    def __post_init__(self):
        for name in GATE_FIELDS + ("g_min", "g_max"):
            if not isfinite(getattr(self, name)):
                raise ValueError(f"gate parameter {name} is not finite")
        if not 0.0 < self.g_min < self.g_max < 1.0:
            raise ValueError(f"need 0 < g_min < g_max < 1, got {self.g_min}, {self.g_max}")

    def replace(self, **changes) -> "GateParams":
        values = {f: getattr(self, f) for f in GATE_FIELDS + ("g_min", "g_max")}
        values.update(changes)
        return GateParams(**values)


@dataclass(frozen=True)
class GateOutput:
    g: float
    z1: float
    z2: float
    s: float
    clipped: bool

    @property
    def sigma(self) -> float:
        return sigmoid(self.s)


def gate_forward(params: GateParams) -> GateOutput:
    z1 = circuit_z(params.theta1, params.phi1)
    z2 = circuit_z(params.theta2, params.phi2)
    s = params.w1 * z1 + params.w2 * z2 + params.b_g
    sig = sigmoid(s)
    g = min(max(sig, params.g_min), params.g_max)
    clipped = sig < params.g_min or sig > params.g_max
    return GateOutput(g=g, z1=z1, z2=z2, s=s, clipped=clipped)


def gate_backward(output: GateOutput, params: GateParams, upstream: float) -> dict[str, float]:
    """Chain rule from dL/dg to every gate trainable.

    The clamp has zero slope once saturated, so a clipped forward pass
    yields an all-zero gradient.
    """
    if output.clipped:
        return {name: 0.0 for name in GATE_FIELDS}
    sig = output.sigma
    ds = upstream * sig * (1.0 - sig)
    return {
        "theta1": ds * params.w1 * float(dz_dtheta(params.theta1, params.phi1)),
        "phi1": ds * params.w1 * float(dz_dphi(params.theta1, params.phi1)),
        "theta2": ds * params.w2 * float(dz_dtheta(params.theta2, params.phi2)),
        "phi2": ds * params.w2 * float(dz_dphi(params.theta2, params.phi2)),
        "w1": ds * output.z1,
        "w2": ds * output.z2,
        "b_g": ds,
    }


def param_shift_grad(params: GateParams, which: str) -> float:
    """d<Z>/d(angle) of the circuit owning ``which``, from two shifted evaluations."""
    if which not in ANGLES:
        raise ValueError(f"unknown angle {which!r}; expected one of {ANGLES}")
    idx = which[-1]
    theta, phi = getattr(params, "theta" + idx), getattr(params, "phi" + idx)
    shift = np.pi / 2
    if which.startswith("theta"):
        plus, minus = circuit_z(theta + shift, phi), circuit_z(theta - shift, phi)
    else:
        plus, minus = circuit_z(theta, phi + shift), circuit_z(theta, phi - shift)
    return 0.5 * (plus - minus)


def param_shift_gate_grad(params: GateParams, upstream: float = 1.0) -> dict[str, float]:
    """Angle gradients of the loss with the circuit derivative taken by parameter shift."""
    out = gate_forward(params)
    if out.clipped:
        return {name: 0.0 for name in ANGLES}
    sig = out.sigma
    ds = upstream * sig * (1.0 - sig)
    return {
        name: ds * getattr(params, "w" + name[-1]) * param_shift_grad(params, name)
        for name in ANGLES
    }
