"""
Quantum gate versus a classical gate
====================================

Same data, seed and hyperparameters; only the source of g changes. The
classical gate is a sigmoid of a linear map of the window mean.
"""
import tempfile
from pathlib import Path

from qssm import engine
from qssm.data import load_csv, prepare, write_sine_csv
from qssm.evaluation import evaluate

workdir = Path(tempfile.mkdtemp())
data = prepare(load_csv(write_sine_csv(workdir / "sine.csv", n_rows=1200, period=48, noise=0.05)),
               window=32, horizon=8)

for gate in ("quantum", "classical", "classical_step"):
    config = engine.TrainConfig(window=32, horizon=8, proj_width=16, latent_width=16,
                                max_epochs=30, gate=gate)
    store, state, records, spec = engine.train(config, data)
    rep = evaluate(store, data.test, spec)
    print(f"{gate:>15}: test MSE {rep.mse:.5f}  final gate {records[-1]['gate_value']:.3f}"
          f"  epochs {state.epoch}")
