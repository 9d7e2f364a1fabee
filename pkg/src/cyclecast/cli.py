"""Command-line harness: synth, bench, ablation, tune, predict.

Every command writes a UTF-8 JSON report with fixed key order into the
output directory and prints text tables rendered purely from that
report. With --no-timing, wall-time fields are stripped so repeated
runs with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, evaluation, gbtree, tuner
from .dataset import (
    SyntheticConfig, generate_synthetic, load_csv, temporal_split, write_csv,
)
from .encoding import STRATEGIES
from .errors import ConfigError, CyclecastError, DataError, InvariantError
from .features import FeatureSpec, ablate, build_matrix, GROUPS
from .gbtree import HyperParams

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

ABLATION_ROWS = [
    ("All Features", None),
    ("No Sinusoidal", "Sinusoidal"),
    ("No Rolling Stats", "RollingStats"),
    ("No Lag Features", "LagFeatures"),
]


def learner_configs(seed: int) -> dict:
    """Named desk-scale learner configurations for the benchmark grid."""
    return {
        "xgb-style": HyperParams(
            learning_rate=0.1, max_depth=6, n_estimators=150,
            min_child_weight=1.0, subsample=0.6, colsample_bytree=1.0,
            reg_lambda=1.0, gamma=0.1, growth=gbtree.DEPTHWISE,
            patience=20, seed=seed,
        ),
        "lgbm-style": HyperParams(
            learning_rate=0.1, max_depth=6, n_estimators=150,
            min_child_weight=1.0, colsample_bytree=0.8,
            reg_lambda=1.0, gamma=0.1, goss_a=0.2, goss_b=0.2,
            growth=gbtree.LEAFWISE, num_leaves=31,
            patience=20, seed=seed,
        ),
    }


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_common(p):
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--no-timing", action="store_true",
                   help="strip wall-time fields from reports")


def _add_data_source(p):
    p.add_argument("--data", default=None, help="input CSV path")
    p.add_argument("--n-hours", type=int, default=4380,
                   help="synthetic rows when no --data is given")
    p.add_argument("--daily-amplitude", type=float, default=1.0)
    p.add_argument("--weekly-amplitude", type=float, default=0.5)
    p.add_argument("--trend-slope", type=float, default=0.0)
    p.add_argument("--noise-std", type=float, default=0.3)
    p.add_argument("--time-col", default="datetime")


def _add_features_flags(p):
    p.add_argument("--features", default=None,
                   help="feature-spec JSON file (defaults to built-in spec)")
    p.add_argument("--params", default=None,
                   help="hyperparameter JSON overrides")
    p.add_argument("--test-fraction", type=float, default=0.2)


def build_parser() -> _Parser:
    parser = _Parser(prog="cyclecast",
                     description="Time-series forecasting benchmark toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset CSV")
    _add_common(p)
    p.add_argument("--n-hours", type=int, default=8760)
    p.add_argument("--daily-amplitude", type=float, default=1.0)
    p.add_argument("--weekly-amplitude", type=float, default=0.5)
    p.add_argument("--trend-slope", type=float, default=0.0)
    p.add_argument("--noise-std", type=float, default=0.3)
    p.add_argument("--output", default=None,
                   help="CSV path (default <out>/synthetic.csv)")

    p = sub.add_parser("bench", help="encoding-comparison benchmark")
    _add_common(p)
    _add_data_source(p)
    _add_features_flags(p)
    p.add_argument("--encodings", default="ordinal,sinusoidal",
                   help="comma-separated encodings to compare")
    p.add_argument("--configs", default="xgb-style,lgbm-style",
                   help="comma-separated learner configs")
    p.add_argument("--save-models", action="store_true",
                   help="save fitted models for later `predict`")

    p = sub.add_parser("ablation", help="feature-group ablation study")
    _add_common(p)
    _add_data_source(p)
    _add_features_flags(p)
    p.add_argument("--encoding", choices=STRATEGIES, default=None,
                   help="re-encode all cyclic features with one strategy")
    p.add_argument("--config", default="xgb-style")

    p = sub.add_parser("tune", help="Bayesian hyperparameter optimization")
    _add_common(p)
    _add_data_source(p)
    _add_features_flags(p)
    p.add_argument("--encoding", choices=STRATEGIES, default=None)
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--init", type=int, default=8)
    p.add_argument("--k", type=int, default=3, help="CV fold count")
    p.add_argument("--delta", type=int, default=168,
                   help="CV validation width in rows")
    p.add_argument("--n-estimators-cap", type=int, default=150,
                   help="cap trees per trial to keep tuning desk-scale")

    p = sub.add_parser("predict", help="predict with a saved model")
    _add_common(p)
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--data", required=True, help="input CSV path")
    p.add_argument("--time-col", default="datetime")

    return parser


def _synth_config(args) -> SyntheticConfig:
    return SyntheticConfig(
        n_hours=args.n_hours,
        daily_amplitude=args.daily_amplitude,
        weekly_amplitude=args.weekly_amplitude,
        trend_slope=args.trend_slope,
        noise_std=args.noise_std,
        seed=args.seed,
    )


def _load_frame(args):
    if args.data is not None:
        return load_csv(args.data, time_col=args.time_col), {"csv": args.data}
    config = _synth_config(args)
    return generate_synthetic(config), {"synthetic": config.__dict__.copy()}


def _load_spec(args) -> FeatureSpec:
    if args.features is None:
        return FeatureSpec()
    path = Path(args.features)
    if not path.exists():
        raise DataError(f"no such feature-spec file: {path}")
    return FeatureSpec.from_json(path.read_text(encoding="utf-8"))


def _load_param_overrides(args) -> dict:
    if args.params is None:
        return {}
    path = Path(args.params)
    if not path.exists():
        raise DataError(f"no such params file: {path}")
    overrides = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(overrides, dict):
        raise ConfigError("params file must hold a JSON object")
    return overrides


def strip_timing(obj):
    """Remove wall-time fields recursively (for --no-timing determinism)."""
    timing_keys = {"train_time_s", "wall_time", "wall_time_s",
                   "mean_latency_us", "total_time_s"}
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items()
                if k not in timing_keys}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def write_report(report: dict, path: Path, no_timing: bool) -> dict:
    if no_timing:
        report = strip_timing(report)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return report


def render_table(headers, rows) -> str:
    """Plain aligned text table; pure function of its inputs."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for j, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(x, nd=4):
    if x is None:
        return "n/a"
    return f"{x:.{nd}f}"


def _split_rows(frame, matrix, test_fraction):
    """Matrix row ranges for a temporal train/test split of the frame."""
    n = len(frame)
    n_train = math.ceil((1.0 - test_fraction) * n)
    if n_train >= n:
        raise ConfigError("test_fraction leaves an empty test partition")
    offset = matrix.dropped_warmup
    tr_hi = n_train - offset
    if tr_hi < 2:
        raise DataError("train partition too small after feature warm-up")
    return tr_hi, matrix.n_rows


def _fit_cell(matrix, tr_hi, params, val_fraction=0.1):
    """Fit on the train rows with a trailing slice held out for patience."""
    n_val = max(1, int(val_fraction * tr_hi))
    fit_hi = tr_hi - n_val
    if fit_hi < 2:
        raise DataError("train partition too small for an early-stop slice")
    X_fit = matrix.values[:fit_hi]
    y_fit = matrix.target[:fit_hi]
    X_es = matrix.values[fit_hi:tr_hi]
    y_es = matrix.target[fit_hi:tr_hi]
    return gbtree.fit(X_fit, y_fit, params, val=(X_es, y_es),
                      feature_names=matrix.column_names)


def _pipeline_rmse(frame, spec, params, test_fraction):
    """Hold-out metrics for one (spec, params) arm."""
    matrix = build_matrix(frame, spec)
    tr_hi, n_rows = _split_rows(frame, matrix, test_fraction)
    t0 = time.perf_counter()
    model, log = _fit_cell(matrix, tr_hi, params)
    train_time = time.perf_counter() - t0
    X_te = matrix.values[tr_hi:]
    y_te = matrix.target[tr_hi:]
    pred = gbtree.predict(model, X_te)
    metrics = evaluation.compute_metrics(y_te, pred)
    test_hours = frame.hours()[matrix.dropped_warmup + tr_hi:]
    return {
        "model": model,
        "log": log,
        "metrics": metrics,
        "train_time": train_time,
        "y_test": y_te,
        "pred": pred,
        "test_hours": test_hours,
        "matrix": matrix,
    }


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _synth_config(args)
    frame = generate_synthetic(config)
    path = Path(args.output) if args.output else out_dir / "synthetic.csv"
    write_csv(frame, path)
    report = {
        "experiment": "synth",
        "seed": args.seed,
        "config": config.__dict__.copy(),
        "output": str(path),
        "frame": frame.meta(),
    }
    write_report(report, out_dir / "synth_report.json", args.no_timing)
    print(f"wrote {len(frame)} rows to {path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    out_dir = Path(args.out)
    encodings = [e.strip() for e in args.encodings.split(",") if e.strip()]
    for e in encodings:
        if e not in STRATEGIES:
            raise ConfigError(f"unknown encoding {e!r}")
    configs = learner_configs(args.seed)
    names = [c.strip() for c in args.configs.split(",") if c.strip()]
    for c in names:
        if c not in configs:
            raise ConfigError(f"unknown learner config {c!r}; "
                              f"choose from {sorted(configs)}")
    overrides = _load_param_overrides(args)

    frame, source = _load_frame(args)
    base_spec = _load_spec(args)

    cells = []
    best = None
    for cname in names:
        params = configs[cname]
        if overrides:
            params = HyperParams.from_dict({**params.to_dict(), **overrides})
        for enc in encodings:
            spec = base_spec.with_encoding(enc)
            result = _pipeline_rmse(frame, spec, params, args.test_fraction)
            cell = {
                "model": cname,
                "encoding": enc,
                "metrics": result["metrics"].to_dict(),
                "train_time_s": result["train_time"],
                "best_iteration": result["model"].best_iteration,
                "stop_reason": result["log"].stop_reason,
                "n_features": len(result["matrix"].column_names),
            }
            cells.append(cell)
            if best is None or result["metrics"].rmse < best["metrics"].rmse:
                best = {**result, "model_name": cname, "encoding": enc,
                        "spec": spec}
            if args.save_models:
                out_dir.mkdir(parents=True, exist_ok=True)
                gbtree.save_model(
                    result["model"],
                    out_dir / f"model_{cname}_{enc}.json",
                    extra={"feature_spec": spec.to_dict(),
                           "target_name": frame.target_name},
                )

    # Relative RMSE improvement of sinusoidal over the ordinal baseline.
    improvement = {}
    for cname in names:
        by_enc = {c["encoding"]: c["metrics"]["rmse"]
                  for c in cells if c["model"] == cname}
        if "ordinal" in by_enc and "sinusoidal" in by_enc:
            improvement[cname] = (
                (by_enc["ordinal"] - by_enc["sinusoidal"]) / by_enc["ordinal"]
            )

    residuals = best["y_test"] - best["pred"]
    report = {
        "experiment": "bench",
        "tool_version": __version__,
        "seed": args.seed,
        "source": source,
        "frame": frame.meta(),
        "test_fraction": args.test_fraction,
        "encodings": encodings,
        "configs": {n: configs[n].to_dict() for n in names},
        "param_overrides": overrides,
        "cells": cells,
        "relative_rmse_improvement_sinusoidal_vs_ordinal": improvement,
        "best_cell": {"model": best["model_name"],
                      "encoding": best["encoding"]},
        "feature_importance": gbtree.feature_importance(best["model"]),
        "period_breakdown": evaluation.period_breakdown(
            best["y_test"], best["pred"], best["test_hours"]),
        "residual_stats": evaluation.residual_stats(residuals).to_dict(),
    }
    report = write_report(report, out_dir / "bench_report.json",
                          args.no_timing)
    print(render_bench_table(report))
    return EXIT_OK


def render_bench_table(report: dict) -> str:
    rows = []
    for cell in report["cells"]:
        m = cell["metrics"]
        t = cell.get("train_time_s")
        rows.append([
            cell["model"], cell["encoding"], _fmt(m["rmse"]),
            _fmt(m["mae"]), _fmt(m["r2"]),
            _fmt(t, 1) if t is not None else "-",
        ])
    table = render_table(
        ["Model", "Encoding", "RMSE", "MAE", "R2", "Time (s)"], rows)
    extra = []
    for name, imp in report.get(
            "relative_rmse_improvement_sinusoidal_vs_ordinal", {}).items():
        extra.append(f"{name}: sinusoidal improves RMSE by {100 * imp:.1f}% "
                     "over ordinal")
    return "\n".join([table] + extra)


def cmd_ablation(args) -> int:
    out_dir = Path(args.out)
    configs = learner_configs(args.seed)
    if args.config not in configs:
        raise ConfigError(f"unknown learner config {args.config!r}")
    params = configs[args.config]
    overrides = _load_param_overrides(args)
    if overrides:
        params = HyperParams.from_dict({**params.to_dict(), **overrides})

    frame, source = _load_frame(args)
    spec = _load_spec(args)
    if args.encoding is not None:
        spec = spec.with_encoding(args.encoding)

    rows = []
    full_rmse = None
    for label, group in ABLATION_ROWS:
        arm_spec = spec if group is None else ablate(spec, group)
        result = _pipeline_rmse(frame, arm_spec, params, args.test_fraction)
        m = result["metrics"]
        if group is None:
            full_rmse = m.rmse
            delta = None
        else:
            delta = (m.rmse - full_rmse) / full_rmse
        rows.append({
            "feature_set": label,
            "rmse": m.rmse,
            "r2": m.r2,
            "delta_performance": delta,
            "n_features": len(result["matrix"].column_names),
            "train_time_s": result["train_time"],
        })

    report = {
        "experiment": "ablation",
        "tool_version": __version__,
        "seed": args.seed,
        "source": source,
        "config": args.config,
        "params": params.to_dict(),
        "test_fraction": args.test_fraction,
        "sign_convention": "delta_performance = (rmse_ablated - rmse_full) / "
                           "rmse_full; positive means removal degrades",
        "rows": rows,
    }
    report = write_report(report, out_dir / "ablation_report.json",
                          args.no_timing)
    print(render_ablation_table(report))
    return EXIT_OK


def render_ablation_table(report: dict) -> str:
    rows = []
    for r in report["rows"]:
        delta = r["delta_performance"]
        rows.append([
            r["feature_set"], _fmt(r["rmse"]), _fmt(r["r2"]),
            "-" if delta is None else f"{100 * delta:+.1f}%",
        ])
    header = report["sign_convention"]
    return header + "\n" + render_table(
        ["Feature Set", "RMSE", "R2", "DeltaPerformance"], rows)


def cmd_tune(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.budget < args.init + 1:
        raise ConfigError("budget must be at least init + 1")
    frame, source = _load_frame(args)
    spec = _load_spec(args)
    if args.encoding is not None:
        spec = spec.with_encoding(args.encoding)
    overrides = _load_param_overrides(args)
    space = tuner.ParamSpace.default()
    cap = args.n_estimators_cap

    fixed = {"growth": gbtree.DEPTHWISE, "patience": 20, "seed": args.seed}

    def to_params(point: dict) -> HyperParams:
        d = dict(point)
        d["n_estimators"] = min(int(d["n_estimators"]), cap)
        d.update(fixed)
        d.update(overrides)
        return HyperParams.from_dict(d)

    def objective(point: dict) -> float:
        params = to_params(point)
        return evaluation.cross_validate(
            frame, spec, params, args.k, args.delta).cv_score

    defaults = HyperParams(seed=args.seed)
    default_point = {
        "learning_rate": defaults.learning_rate,
        "max_depth": defaults.max_depth,
        "n_estimators": min(defaults.n_estimators, cap),
        "min_child_weight": defaults.min_child_weight,
        "subsample": defaults.subsample,
        "colsample_bytree": defaults.colsample_bytree,
        "gamma": defaults.gamma,
    }

    trials_path = out_dir / "trials.jsonl"
    stream = open(trials_path, "w", encoding="utf-8")

    def on_trial(trial):
        stream.write(json.dumps(trial.to_dict()) + "\n")
        stream.flush()

    try:
        best_point, trials = tuner.optimize(
            space, objective, budget=args.budget, init=args.init,
            seed=args.seed, initial_points=[default_point],
            on_trial=on_trial,
        )
    finally:
        stream.close()

    trace = tuner.incumbent_trace(trials)
    with open(out_dir / "convergence.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "incumbent_rmse"])
        for i, v in enumerate(trace):
            writer.writerow([i, repr(v)])

    best_params = to_params(best_point)
    default_score = trials[0].objective
    best_score = min(t.objective for t in trials if not t.failed)
    report = {
        "experiment": "tune",
        "tool_version": __version__,
        "seed": args.seed,
        "source": source,
        "budget": args.budget,
        "init": args.init,
        "k": args.k,
        "delta": args.delta,
        "default_cv_score": default_score,
        "best_cv_score": best_score,
        "best_point": best_point,
        "best_params": best_params.to_dict(),
        "n_failed_trials": sum(1 for t in trials if t.failed),
    }
    report = write_report(report, out_dir / "tune_report.json",
                          args.no_timing)
    with open(out_dir / "best_params.json", "w", encoding="utf-8") as fh:
        json.dump(best_params.to_dict(), fh, indent=2)
        fh.write("\n")
    print(render_table(
        ["", "cv_score"],
        [["default", _fmt(default_score)], ["tuned", _fmt(best_score)]],
    ))
    print(f"trial history: {trials_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, extra = gbtree.load_model(args.model)
    if "feature_spec" not in extra:
        raise DataError("model file carries no feature spec; cannot rebuild "
                        "features from raw data")
    spec = FeatureSpec.from_dict(extra["feature_spec"])
    target_name = extra.get("target_name", "global_active_power")
    frame = load_csv(args.data, time_col=args.time_col,
                     target_name=target_name, allow_missing_target=True)
    have_target = bool(np.all(np.isfinite(frame.target)))
    if not have_target and (spec.rolling_windows or spec.lags
                            or spec.ewm_halflives):
        raise DataError(
            "data has no target column but the model's features need "
            "target history (rolling/lag/ewm)"
        )
    matrix = build_matrix(frame, spec)
    if tuple(matrix.column_names) != model.feature_names:
        raise DataError("rebuilt feature columns do not match the model")

    t0 = time.perf_counter()
    pred = gbtree.predict(model, matrix)
    elapsed = time.perf_counter() - t0
    latency_us = 1e6 * elapsed / max(matrix.n_rows, 1)

    pred_path = out_dir / "predictions.csv"
    offset = matrix.dropped_warmup
    with open(pred_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["datetime", "prediction"])
        for i in range(matrix.n_rows):
            ts = frame.timestamps[offset + i]
            writer.writerow([ts.isoformat(sep=" "), repr(float(pred[i]))])

    report = {
        "experiment": "predict",
        "tool_version": __version__,
        "model": str(args.model),
        "data": str(args.data),
        "rows": matrix.n_rows,
        "dropped_warmup": offset,
        "predictions": str(pred_path),
        "mean_latency_us": latency_us,
    }
    if have_target:
        report["metrics"] = evaluation.compute_metrics(
            matrix.target, pred).to_dict()
    report = write_report(report, out_dir / "predict_report.json",
                          args.no_timing)
    if have_target:
        m = report["metrics"]
        print(render_table(
            ["RMSE", "MAE", "R2", "MAPE%"],
            [[_fmt(m["rmse"]), _fmt(m["mae"]), _fmt(m["r2"]),
              _fmt(m["mape_pct"], 2)]],
        ))
    print(f"wrote {matrix.n_rows} predictions to {pred_path}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "bench": cmd_bench,
    "ablation": cmd_ablation,
    "tune": cmd_tune,
    "predict": cmd_predict,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return COMMANDS[args.command](args)


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantError, CyclecastError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
