"""
The variational gate
====================

Two single-qubit circuits produce <Z> = cos(theta) cos(phi). A linear mix of
the two goes through a clamped sigmoid and becomes the state-space gate g.
"""
import math

import numpy as np

from qssm import qgate

# the simulated statevector agrees with the closed form
theta, phi = np.meshgrid(np.linspace(-math.pi, math.pi, 5), np.linspace(-math.pi, math.pi, 5))
z = qgate.expect_z(qgate.prepare_state(theta, phi))
print("max |<Z> - cos cos| on a 5x5 grid:", np.max(np.abs(z - np.cos(theta) * np.cos(phi))))

# at initialisation every angle is pi/2, so both circuits read 0 and g = 0.5
p = qgate.GateParams(*(4 * [math.pi / 2]), w1=0.01, w2=0.01, b_g=0.0)
print("initial gate:", qgate.gate_forward(p).g)

# sweeping theta1 moves g smoothly until the clamp takes over
for t in np.linspace(0, math.pi, 7):
    out = qgate.gate_forward(p.replace(theta1=t, w1=4.0, phi1=0.0))
    print(f"theta1 = {t:5.3f}  z1 = {out.z1:+.3f}  g = {out.g:.4f}  clipped = {out.clipped}")

# the parameter-shift rule gives the exact circuit derivative from two evaluations
p = p.replace(theta1=0.7, phi1=-0.4)
print("shift:", qgate.param_shift_grad(p, "theta1"), " analytic:", qgate.dz_dtheta(0.7, -0.4))
