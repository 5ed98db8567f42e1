"""Forecast metrics, the last-value baseline and report serialization."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .ablation import classical_gate_ablation  # noqa: F401  re-exported
from .data import WindowSample
from .engine import ModelSpec, ParameterStore, predict

REPORT_SCHEMA = "qssm.report/1"
CSV_COLUMNS = ("dataset", "H", "split", "mse", "mae", "n", "seed", "config_hash", "seconds")


def _check_shapes(pred, truth):
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _check_shapes(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    pred, truth = _check_shapes(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def batch_metrics(pred, truth) -> tuple[float, float]:
    """Mean over samples of per-sample MSE and MAE for (N, H, F) arrays."""
    pred, truth = _check_shapes(pred, truth)
    err = pred - truth
    axes = tuple(range(1, err.ndim))
    return float(np.mean(np.mean(err ** 2, axis=axes))), float(np.mean(np.mean(np.abs(err), axis=axes)))


def naive_last_value(sample: WindowSample) -> np.ndarray:
    return np.repeat(np.asarray(sample.x_last, dtype=float)[None], sample.Y.shape[0], axis=0)


@dataclass
class ForecastReport:
    dataset: str
    H: int
    split: str
    mse: float
    mae: float
    n: int
    seed: int
    config_hash: str
    seconds: float
    schema: str = REPORT_SCHEMA

    def __post_init__(self):
        if self.mse < 0 or self.mae < 0:
            raise ValueError("metrics must be non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ForecastReport":
        data = json.loads(text)
        if data.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {data.get('schema')!r}")
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    def csv_row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(CSV_COLUMNS)
        w.writerow([repr(v) if isinstance(v, float) else v for v in self.csv_row()])
        return buf.getvalue()


def predict_split(samples, store: ParameterStore, spec: ModelSpec, chunk: int = 256) -> np.ndarray:
    out = [predict(samples[i:i + chunk], store, spec, "eval")[0] for i in range(0, len(samples), chunk)]
    return np.concatenate(out)


def evaluate(store: ParameterStore, samples, spec: ModelSpec, *, dataset: str = "", split: str = "test",
             seed: int = 0, config_hash: str = "") -> ForecastReport:
    """Eval-mode forecast of every window in ``samples`` and its MSE/MAE."""
    if len(samples) == 0:
        raise ValueError(f"split {split!r} has no windows")
    t0 = time.perf_counter()
    pred = predict_split(samples, store, spec)
    m_se, m_ae = batch_metrics(pred, np.stack([s.Y for s in samples]))
    return ForecastReport(dataset=dataset, H=spec.horizon, split=split, mse=m_se, mae=m_ae,
                          n=len(samples), seed=seed, config_hash=config_hash,
                          seconds=time.perf_counter() - t0)


def evaluate_naive(samples, *, dataset: str = "", split: str = "test") -> ForecastReport:
    t0 = time.perf_counter()
    pred = np.stack([naive_last_value(s) for s in samples])
    m_se, m_ae = batch_metrics(pred, np.stack([s.Y for s in samples]))
    return ForecastReport(dataset=dataset, H=samples[0].Y.shape[0], split=split, mse=m_se, mae=m_ae,
                          n=len(samples), seed=0, config_hash="naive",
                          seconds=time.perf_counter() - t0)
