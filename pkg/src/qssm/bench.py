"""Wall-clock scaling of forward+backward in W, H and d."""
from __future__ import annotations

import time

import numpy as np

from . import engine
from .backbone import encode, encode_backward
from .decoder import decode, decode_backward
from .engine import Batch, ModelSpec

WINDOWS = (64, 128, 256, 512)
HORIZONS = (24, 48, 96, 192)
LATENT_WIDTHS = (32, 64, 128, 256)


def _model(rng, window, horizon, latent_width=128, proj_width=128, n_in=11, n_out=7, batch=32):
    spec = ModelSpec(n_in=n_in, n_out=n_out, window=window, horizon=horizon, proj_width=proj_width,
                     latent_width=latent_width, calendar_indices=tuple(range(n_out, n_in)),
                     dropout_p=0.0)
    store = engine.build_store(spec)
    engine.kaiming_init(store, rng)
    b = Batch(x=rng.normal(size=(batch, window, n_in)), y=rng.normal(size=(batch, horizon, n_out)),
              x_last=rng.normal(size=(batch, n_out)))
    return spec, store, b


def _best_time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def full_runner(spec, store, batch):
    def run():
        _, cache = engine.forward_loss(batch, store, spec, "eval")
        engine.backward(cache, store)
        store.zero_grad()
    return run


def backbone_runner(spec, store, batch):
    bp = engine.backbone_params(store)
    up = np.ones((len(batch), spec.latent_width))

    def run():
        _, cache = encode(batch.x, 0.5, bp, spec.calendar_indices)
        encode_backward(cache, bp, up)
    return run


def decoder_runner(spec, store, batch):
    dp = engine.decoder_params(store, spec)
    h = np.ones((len(batch), spec.latent_width))
    up = np.ones((len(batch), spec.horizon, spec.n_out))

    def run():
        _, cache = decode(h, batch.x_last, dp, "eval")
        decode_backward(cache, dp, up)
    return run


def time_full(spec, store, batch, repeats=5) -> float:
    run = full_runner(spec, store, batch)
    run()
    return _best_time(run, repeats)


def time_backbone(spec, store, batch, repeats=5) -> float:
    run = backbone_runner(spec, store, batch)
    run()
    return _best_time(run, repeats)


def time_decoder(spec, store, batch, repeats=5) -> float:
    run = decoder_runner(spec, store, batch)
    run()
    return _best_time(run, repeats)


def interleaved_times(runners, repeats) -> list[float]:
    """Best time of each runner, visiting them round-robin so drift hits all sizes alike."""
    for run in runners:
        run()
    best = [np.inf] * len(runners)
    for _ in range(repeats):
        for i, run in enumerate(runners):
            best[i] = min(best[i], _best_time(run, 1))
    return best


def scaling_exponent(sizes, times) -> float:
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])


def run_bench(repeats: int = 15, batch: int = 32, seed: int = 0,
              windows=WINDOWS, horizons=HORIZONS, latent_widths=LATENT_WIDTHS) -> list[dict]:
    """Rows of (sweep, W, H, d, part, seconds), each the best of ``repeats`` interleaved runs.

    The W sweep times the whole model at H=24; the H sweep times the decoder
    (the only H-dependent part) and the whole model at W=96; the d sweep times
    the backbone.
    """
    rng = np.random.default_rng(seed)
    plan = []  # (row, runner)
    for w in windows:
        spec, store, b = _model(rng, w, 24, batch=batch)
        plan.append(({"sweep": "W", "W": w, "H": 24, "d": 128, "part": "model"},
                     full_runner(spec, store, b)))
    for h in horizons:
        spec, store, b = _model(rng, 96, h, batch=batch)
        plan.append(({"sweep": "H", "W": 96, "H": h, "d": 128, "part": "decoder"},
                     decoder_runner(spec, store, b)))
        plan.append(({"sweep": "H", "W": 96, "H": h, "d": 128, "part": "model"},
                     full_runner(spec, store, b)))
    for d in latent_widths:
        spec, store, b = _model(rng, 96, 24, latent_width=d, batch=batch)
        plan.append(({"sweep": "d", "W": 96, "H": 24, "d": d, "part": "backbone"},
                     backbone_runner(spec, store, b)))
    rows = []
    # each timed series is interleaved only with itself
    for key in dict.fromkeys((row["sweep"], row["part"]) for row, _ in plan):
        group = [(row, run) for row, run in plan if (row["sweep"], row["part"]) == key]
        times = interleaved_times([run for _, run in group], repeats)
        rows += [{**row, "seconds": t} for (row, _), t in zip(group, times)]
    return rows


def summarize(rows) -> dict:
    """Doubling ratios and fitted exponents for each sweep."""
    def series(sweep, part, key):
        sel = [r for r in rows if r["sweep"] == sweep and r["part"] == part]
        return [r[key] for r in sel], [r["seconds"] for r in sel]

    out = {}
    for sweep, part, key in (("W", "model", "W"), ("H", "decoder", "H"), ("H", "model", "H"),
                             ("d", "backbone", "d")):
        sizes, times = series(sweep, part, key)
        if len(sizes) < 2:
            continue
        by_size = dict(zip(sizes, times))
        out[f"{key}:{part}"] = {
            "exponent": scaling_exponent(sizes, times),
            "ratios": [t1 / t0 for t0, t1 in zip(times, times[1:])],
            "quadruple_ratios": {f"{n}->{4 * n}": by_size[4 * n] / by_size[n]
                                 for n in sizes if 4 * n in by_size},
            "sizes": sizes,
        }
    return out
