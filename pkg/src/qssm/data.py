"""CSV ingestion, chronological splits, z-scoring, calendar encodings and windowing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

DEFAULT_DATETIME_FORMAT = "%Y-%m-%d %H:%M:%S"
CALENDAR_MODES = ("ett", "traffic", "none")


@dataclass
class RawSeries:
    timestamps: list[datetime] | None
    values: np.ndarray  # (N, F_raw)
    columns: list[str]

    def __len__(self):
        return self.values.shape[0]


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    columns: list[str] = field(default_factory=list)

    def apply(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def invert(self, values):
        return np.asarray(values, dtype=float) * self.std + self.mean


@dataclass
class WindowSample:
    X: np.ndarray  # (W, F_in)
    Y: np.ndarray  # (H, F_out)
    x_last: np.ndarray  # (F_out,)
    start: int = 0  # row index of X[0] in the full series


def load_csv(path, datetime_column: str | None = "date",
             datetime_format: str = DEFAULT_DATETIME_FORMAT) -> RawSeries:
    """Read a header-first CSV; rows are numbered from 1 after the header in errors."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    if datetime_column is None:
        dt_idx = None
    elif datetime_column in header:
        dt_idx = header.index(datetime_column)
    else:
        raise ValueError(f"{path}: no datetime column {datetime_column!r} in header")
    value_cols = [i for i in range(len(header)) if i != dt_idx]
    columns = [header[i] for i in value_cols]

    values = np.empty((len(rows), len(value_cols)))
    stamps = [] if dt_idx is not None else None
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        if dt_idx is not None:
            try:
                stamps.append(datetime.strptime(row[dt_idx].strip(), datetime_format))
            except ValueError:
                raise ValueError(
                    f"{path}: row {r}, column {header[dt_idx]!r}: cannot parse "
                    f"{row[dt_idx]!r} with format {datetime_format!r}") from None
        for j, c in enumerate(value_cols):
            cell = row[c].strip()
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise ValueError(f"{path}: row {r}, column {header[c]!r}: non-numeric value {cell!r}")
            values[r - 1, j] = v

    if stamps is not None and len(stamps) > 1:
        spacing = stamps[1] - stamps[0]
        if spacing <= timedelta(0):
            raise ValueError(f"{path}: timestamps not strictly increasing at row 2")
        for r in range(2, len(stamps)):
            delta = stamps[r] - stamps[r - 1]
            if delta <= timedelta(0):
                raise ValueError(f"{path}: timestamps not strictly increasing at row {r + 1}")
            if delta != spacing:
                raise ValueError(f"{path}: irregular spacing at row {r + 1} ({delta} vs {spacing})")
    return RawSeries(timestamps=stamps, values=values, columns=columns)


def chronological_split(n_rows: int, ratios=(0.6, 0.2, 0.2), window: int | None = None,
                        horizon: int | None = None) -> list[range]:
    """Contiguous train/val/test row ranges cut at floor(r1*N) and floor((r1+r2)*N)."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    # the nudge keeps 0.6 * 10 from landing on 5.999...
    a = math.floor(ratios[0] * n_rows + 1e-9)
    b = math.floor((ratios[0] + ratios[1]) * n_rows + 1e-9)
    splits = [range(0, a), range(a, b), range(b, n_rows)]
    if window is not None and horizon is not None:
        need = window + horizon
        for name, rng in zip(("train", "validation", "test"), splits):
            if len(rng) < need:
                raise ValueError(
                    f"{name} split has {len(rng)} rows; at least W+H = {need} are required "
                    f"(total series length >= {math.ceil(need / min(r for r in ratios if r > 0))})")
    return splits


def fit_normalizer(values, train_range: range, columns=None) -> Normalizer:
    values = np.asarray(values, dtype=float)
    if len(train_range) == 0:
        raise ValueError("training range is empty")
    train = values[train_range.start:train_range.stop]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    columns = list(columns) if columns is not None else [str(i) for i in range(values.shape[1])]
    for j, s in enumerate(std):
        if not s > 0:
            raise ValueError(f"column {columns[j]!r} is constant on the training split")
    return Normalizer(mean=mean, std=std, columns=columns)


def apply_normalizer(values, normalizer: Normalizer) -> np.ndarray:
    return normalizer.apply(values)


def denormalize(values, normalizer: Normalizer) -> np.ndarray:
    return normalizer.invert(values)


def _hour_of_day(ts: datetime) -> float:
    return ts.hour + ts.minute / 60.0 + ts.second / 3600.0


def calendar_features(timestamps, mode: str) -> np.ndarray:
    """Sin/cos calendar encodings, shape (N, 4) or (N, 0) for mode 'none'."""
    if mode not in CALENDAR_MODES:
        raise ValueError(f"calendar mode must be one of {CALENDAR_MODES}, got {mode!r}")
    if mode == "none":
        return np.zeros((0 if timestamps is None else len(timestamps), 0))
    if timestamps is None:
        raise ValueError(f"calendar mode {mode!r} needs timestamps")
    hour = np.array([_hour_of_day(t) for t in timestamps])
    if mode == "ett":
        period, other = 365.0, np.array([t.timetuple().tm_yday for t in timestamps], dtype=float)
    else:
        period, other = 7.0, np.array([t.weekday() for t in timestamps], dtype=float)
    return np.column_stack([
        np.sin(2 * np.pi * hour / 24), np.cos(2 * np.pi * hour / 24),
        np.sin(2 * np.pi * other / period), np.cos(2 * np.pi * other / period),
    ])


def add_calendar_features(values, timestamps, mode: str) -> tuple[np.ndarray, list[int]]:
    """Append calendar columns after the raw ones; return the matrix and their indices."""
    values = np.asarray(values, dtype=float)
    cal = calendar_features(timestamps, mode)
    if mode == "none":
        return values.copy(), []
    n_raw = values.shape[1]
    return np.hstack([values, cal]), list(range(n_raw, n_raw + cal.shape[1]))


def make_windows(matrix, rows: range, window: int, horizon: int, target_indices) -> list[WindowSample]:
    """Stride-1 windows fully inside ``rows``; targets restricted to ``target_indices``."""
    matrix = np.asarray(matrix, dtype=float)
    target_indices = list(target_indices)
    count = len(rows) - window - horizon + 1
    if window < 1 or horizon < 1:
        raise ValueError("window and horizon must be positive")
    if count < 1:
        raise ValueError(f"range of {len(rows)} rows is shorter than W+H = {window + horizon}")
    out = []
    for i in range(count):
        s = rows.start + i
        X = matrix[s:s + window]
        Y = matrix[s + window:s + window + horizon, target_indices]
        out.append(WindowSample(X=X, Y=Y, x_last=X[-1, target_indices], start=s))
    return out


@dataclass
class PreparedData:
    train: list[WindowSample]
    val: list[WindowSample]
    test: list[WindowSample]
    normalizer: Normalizer
    calendar_indices: list[int]
    target_indices: list[int]
    target_names: list[str]
    n_in: int
    splits: list[range]
    matrix: np.ndarray

    def split(self, name: str) -> list[WindowSample]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}; expected train, val or test") from None


def prepare(series: RawSeries, window: int, horizon: int, calendar_mode: str = "none",
            target_columns=(), predict_calendar: bool = False,
            ratios=(0.6, 0.2, 0.2)) -> PreparedData:
    """Split, normalize raw columns on the train split, append calendar columns, window."""
    splits = chronological_split(len(series), ratios, window, horizon)
    norm = fit_normalizer(series.values, splits[0], series.columns)
    matrix, cal = add_calendar_features(norm.apply(series.values), series.timestamps, calendar_mode)

    if target_columns:
        unknown = [c for c in target_columns if c not in series.columns]
        if unknown:
            raise ValueError(f"unknown target columns {unknown}; available {series.columns}")
        targets = [series.columns.index(c) for c in target_columns]
    else:
        targets = list(range(len(series.columns)))
    names = [series.columns[i] for i in targets]
    if predict_calendar:
        targets += cal
        names += [f"cal{j}" for j in range(len(cal))]

    sets = [make_windows(matrix, r, window, horizon, targets) for r in splits]
    return PreparedData(*sets, normalizer=norm, calendar_indices=cal, target_indices=targets,
                        target_names=names, n_in=matrix.shape[1], splits=splits, matrix=matrix)


def write_sine_csv(path, n_rows: int = 1000, period: float = 24.0, noise: float = 0.0,
                   n_features: int = 1, seed: int = 0,
                   start: datetime = datetime(2016, 7, 1)) -> Path:
    """Hourly synthetic series: unit-amplitude sines with per-feature phase offsets."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_rows, dtype=float)
    cols = []
    for j in range(n_features):
        y = np.sin(2 * np.pi * t / period + j * np.pi / 3)
        if noise > 0:
            y = y + noise * rng.standard_normal(n_rows)
        cols.append(y)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date"] + [f"s{j}" for j in range(n_features)])
        for i in range(n_rows):
            stamp = (start + timedelta(hours=i)).strftime(DEFAULT_DATETIME_FORMAT)
            w.writerow([stamp] + [repr(float(c[i])) for c in cols])
    return path
