"""
Learning a sine wave
====================

Train a small model on a noiseless period-48 sine and compare it with the
last-value baseline. Takes under a minute on one CPU core.
"""
import tempfile
from pathlib import Path

from qssm import engine
from qssm.data import load_csv, prepare, write_sine_csv
from qssm.evaluation import evaluate, evaluate_naive

workdir = Path(tempfile.mkdtemp())
series = load_csv(write_sine_csv(workdir / "sine.csv", n_rows=2000, period=48))
data = prepare(series, window=32, horizon=8)
print(f"windows: train {len(data.train)}, val {len(data.val)}, test {len(data.test)}")



def show(r):
    if r["epoch"] % 20 == 0:
        print(f"epoch {r['epoch']:3d}  val {r['val_mse']:.5f}  lr {r['lr']:.1e}  gate {r['gate_value']:.3f}")


config = engine.TrainConfig(window=32, horizon=8, proj_width=32, latent_width=32, max_epochs=200)
store, state, records, spec = engine.train(config, data, on_epoch=show)

print(f"stopped after {state.epoch} epochs, best epoch {state.best_epoch}")
print("model test MSE:", evaluate(store, data.test, spec).mse)
print("naive test MSE:", evaluate_naive(data.test).mse)
