"""qssm command line: train, eval, forecast, gradcheck, bench, ablate.

Exit codes: 0 success, 1 check or validation failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import engine
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import FIELD_TYPES, RunConfig, config_hash, emit_config, load_config, parse_value
from .data import load_csv, prepare
from .errors import ContractViolation
from .evaluation import ForecastReport, evaluate, predict_split
from .gradcheck import run_gradcheck

OUTPUT_ENV = "QSSM_OUTPUT_DIR"
LOG_COLUMNS = ("epoch", "train_mse", "val_mse", "lr", "gate_value")
BENCH_COLUMNS = ("sweep", "W", "H", "d", "part", "seconds")
RATIO_BAND = (1.6, 2.6)


class UsageError(Exception):
    pass


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    for f in fields(RunConfig):
        p.add_argument(_flag(f.name), dest=f"cfg_{f.name}", default=None, metavar=f.type.upper(),
                       help=f"override {f.name}")


def _resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    cfg = load_config(args.config, base) if args.config else (base or RunConfig())
    changes = {}
    for f in fields(RunConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            try:
                changes[f.name] = parse_value(f.name, raw)
            except ValueError as exc:
                raise UsageError(f"{_flag(f.name)}: {exc}") from None
    cfg = cfg.replace(**changes) if changes else cfg
    if not cfg.output_dir:
        cfg = cfg.replace(output_dir=os.environ.get(OUTPUT_ENV, "qssm_out"))
    return cfg


def _load_data(cfg: RunConfig):
    if not cfg.dataset:
        raise UsageError("--dataset is required (path to the input CSV)")
    series = load_csv(cfg.dataset, cfg.datetime_column or None, cfg.datetime_format)
    return prepare(series, cfg.window, cfg.horizon, cfg.calendar_mode, cfg.target_columns,
                   cfg.predict_calendar)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_rows(path: Path, columns, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _write_report(report: ForecastReport, out: Path, stem: str):
    (out / f"{stem}.json").write_text(report.to_json() + "\n")
    (out / f"{stem}.csv").write_text(report.to_csv())


def _dataset_id(cfg: RunConfig) -> str:
    return cfg.dataset_id or Path(cfg.dataset).stem


def _train_run(cfg: RunConfig, data, out: Path) -> tuple[ForecastReport, list]:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(emit_config(cfg))
    store, state, records, spec = engine.train(cfg.train_config(), data)
    write_rows(out / "train_log.csv", LOG_COLUMNS, records)
    h = config_hash(cfg)
    meta = {"spec": {**asdict(spec), "calendar_indices": list(spec.calendar_indices)},
            "best_epoch": state.best_epoch, "epochs": state.epoch, "target_names": data.target_names}
    save_checkpoint(out / "model.ckpt", store.snapshot(), h, meta)
    report = evaluate(store, data.test, spec, dataset=_dataset_id(cfg), split="test",
                      seed=cfg.seed, config_hash=h)
    _write_report(report, out, "report_test")
    return report, records


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    data = _load_data(cfg)
    out = Path(cfg.output_dir)
    report, records = _train_run(cfg, data, out)
    print(f"trained {len(records)} epochs; test mse {report.mse:.6g} mae {report.mae:.6g}; "
          f"outputs in {out}")
    return 0


def _load_model(args):
    ckpt = Path(args.checkpoint)
    values, header = load_checkpoint(ckpt)
    if args.config is None and (ckpt.parent / "config.txt").exists():
        args.config = str(ckpt.parent / "config.txt")
    cfg = _resolve_config(args)
    spec_meta = dict(header["meta"]["spec"])
    spec_meta["calendar_indices"] = tuple(spec_meta["calendar_indices"])
    spec = engine.ModelSpec(**spec_meta)
    if cfg.horizon != spec.horizon:
        raise ContractViolation(
            f"horizon {cfg.horizon} differs from the checkpoint's horizon {spec.horizon}; "
            "the decoder shape is horizon-specific, retrain instead")
    if config_hash(cfg) != header["config_hash"]:
        raise ContractViolation(
            f"config hash {config_hash(cfg)} does not match checkpoint hash {header['config_hash']}; "
            "evaluate with the config the model was trained with")
    store = engine.build_store(spec)
    if set(values) != set(store):
        raise CheckpointError(f"{ckpt}: parameter names do not match the model")
    for name, v in values.items():
        store.set_value(name, v)
    return cfg, spec, store, header


def cmd_eval(args) -> int:
    cfg, spec, store, header = _load_model(args)
    data = _load_data(cfg)
    report = evaluate(store, data.split(args.split), spec, dataset=_dataset_id(cfg), split=args.split,
                      seed=cfg.seed, config_hash=header["config_hash"])
    out = Path(args.output_dir_eval or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(report, out, f"eval_{args.split}")
    print(report.to_json())
    return 0


def cmd_forecast(args) -> int:
    cfg, spec, store, header = _load_model(args)
    data = _load_data(cfg)
    samples = data.split(args.split)
    try:
        sample = samples[args.index]
    except IndexError:
        raise ValueError(f"window index {args.index} out of range; split {args.split!r} "
                         f"has {len(samples)} windows") from None
    y = predict_split([sample], store, spec)[0]
    if args.denormalize:
        raw = [i for i in data.target_indices if i < len(data.normalizer.mean)]
        y = y.copy()
        y[:, :len(raw)] = y[:, :len(raw)] * data.normalizer.std[raw] + data.normalizer.mean[raw]
    rows = [{"step": i + 1, **{n: y[i, j] for j, n in enumerate(data.target_names)}}
            for i in range(spec.horizon)]
    cols = ("step", *data.target_names)
    if args.out:
        write_rows(Path(args.out), cols, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
    return 0


def cmd_gradcheck(args) -> int:
    if args.dropout_p > 0:
        raise UsageError("gradcheck needs a deterministic forward pass; dropout must be 0")
    gates = ("quantum", "classical") if args.gate == "both" else (args.gate,)
    results = run_gradcheck(seed=args.seed, gates=gates, tol=args.tol)
    failed = []
    for gate, res in results.items():
        line = f"{gate}: max finite-difference relative error {res.max_fd_error:.3e}"
        if res.shift_errors:
            line += f", max parameter-shift error {max(res.shift_errors.values()):.3e}"
        print(line)
        for name in res.failures:
            err = res.fd_errors.get(name, res.shift_errors.get(name.split(" ")[0]))
            print(f"  FAIL {name}: {err:.3e} >= {args.tol:g}")
            failed.append(name)
    if failed:
        print(f"gradcheck failed for: {', '.join(failed)}")
        return 1
    print(f"gradcheck passed (tol {args.tol:g})")
    return 0


def cmd_bench(args) -> int:
    rows = bench_mod.run_bench(repeats=args.repeats, batch=args.batch_size, seed=args.seed)
    out = Path(args.output_dir or os.environ.get(OUTPUT_ENV, "qssm_out"))
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "bench.csv", BENCH_COLUMNS, rows)
    summary = bench_mod.summarize(rows)
    ok = True
    for key, s in summary.items():
        per_doubling = 2.0 ** s["exponent"]
        line = (f"{key}: exponent {s['exponent']:.3f} (x{per_doubling:.2f} per doubling), "
                f"pairwise ratios {', '.join(f'{r:.2f}' for r in s['ratios'])}")
        if key == "d:backbone":
            line += "; x4 ratios " + ", ".join(f"{k} {v:.2f}" for k, v in s["quadruple_ratios"].items())
        print(line)
        if key in ("W:model", "H:decoder") and not RATIO_BAND[0] <= per_doubling <= RATIO_BAND[1]:
            ok = False
    (out / "bench_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if args.check and not ok:
        print(f"scaling outside {RATIO_BAND}")
        return 1
    return 0


ABLATION_COLUMNS = ("gate", "dataset", "H", "split", "mse", "mae", "n", "seed", "config_hash",
                    "run_config_hash", "seconds")


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    data = _load_data(cfg)
    out = Path(cfg.output_dir)
    shared = config_hash(cfg, exclude=("gate",))
    rows = []
    for gate in ("quantum", args.ablation_gate):
        run_cfg = cfg.replace(gate=gate, output_dir=str(out / gate))
        report, _ = _train_run(run_cfg, data, out / gate)
        rows.append({"gate": gate, **asdict(report), "run_config_hash": report.config_hash,
                     "config_hash": shared})
    write_rows(out / "ablation.csv", ABLATION_COLUMNS, rows)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    for r in rows:
        print(f"{r['gate']:>15}: test mse {r['mse']:.6g} mae {r['mae']:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qssm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and report test metrics")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a checkpoint on a split"),
                                 ("forecast", cmd_forecast, "emit one window's forecast as CSV")):
        p = sub.add_parser(name, help=helptext)
        _add_config_flags(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", default="test", choices=("train", "val", "test"))
        if name == "eval":
            p.add_argument("--report-dir", dest="output_dir_eval", default=None,
                           help="where to write eval_<split>.json/csv (default: checkpoint dir)")
        else:
            p.add_argument("--index", type=int, default=-1, help="window index within the split")
            p.add_argument("--denormalize", action="store_true")
            p.add_argument("--out", help="CSV path (default stdout)")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference and parameter-shift gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--dropout-p", type=float, default=0.0)
    p.add_argument("--gate", choices=("quantum", "classical", "both"), default="both")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="time forward+backward while scaling W, H and d")
    p.add_argument("--repeats", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--check", action="store_true", help=f"exit 1 if doubling ratios leave {RATIO_BAND}")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train quantum and classical gates with the same seed")
    _add_config_flags(p)
    p.add_argument("--ablation-gate", choices=("classical", "classical_step"), default="classical")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"qssm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ContractViolation, OSError, FloatingPointError) as exc:
        print(f"qssm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
