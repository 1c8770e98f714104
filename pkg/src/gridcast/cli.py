"""Command-line pipeline: synth | moran | train | forecast | evaluate.

Each command reads a JSON config (``--config``), applies flag overrides,
and writes its outputs under the workdir (``--workdir``, the config, or
the GRIDCAST_WORKDIR environment variable, in that order).  Failures exit
nonzero and name the pipeline stage that failed.  A lock file in the
workdir keeps concurrent mutating commands out.
"""

from __future__ import annotations

import argparse
import contextlib
import csv as csv_mod
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import ingest, metrics, preprocess, spatial, synth
from .checkpoint import checkpoint_load, checkpoint_save
from .errors import (GridcastError, ParameterError, SchemaError, StageError,
                     WindowError)
from .ingest import TARGET_COL, WEATHER_FEATURES
from .model import ModelConfig, TrainConfig, forecast as model_forecast, init_params, train
from .preprocess import TEMPORAL_COLS

CONFIG_SCHEMA_VERSION = 1


@dataclass
class PipelineConfig:
    """Every knob of the pipeline; defaults follow the reference setup."""

    schema_version: int = CONFIG_SCHEMA_VERSION
    # paths (relative paths resolve against the workdir)
    outage_csv: str = "outage.csv"
    weather_csv: str = "weather.csv"
    coords_csv: str = "coords.csv"
    workdir: str = ""
    # preprocessing
    q_low: float = 0.25
    q_high: float = 0.99
    denoise_window: int = 5
    denoise_sigma: float = 1.0
    n_in: int = 7
    n_out: int = 7
    test_fraction: float = 0.2
    pca_threshold: float = 0.95
    # model
    hidden1: int = 100
    hidden2: int = 70
    dense_size: int = 32
    head_kind: str = "exp"
    dropout1: float = 0.2
    dropout2: float = 0.3
    block1_candidate: str = "relu"
    block1_output: str = "relu"
    block2_candidate: str = "tanh"
    block2_output: str = "tanh"
    # training
    epochs: int = 50
    batch_size: int = 32
    validation_fraction: float = 0.2
    early_stopping_patience: int = 5
    loss_mode: str = "auto"
    learning_rate: float = 1e-3
    teacher_forcing_ratio: float = 0.0
    seed: int = 0
    # Moran's I
    moran_scheme: str = "knn"
    moran_k: int = 4
    moran_cutoff: float | None = None
    moran_row_standardize: bool = True
    n_permutations: int = 999
    # synthetic data overrides (SynthSpec fields)
    synth: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides=None) -> "PipelineConfig":
        cfg = cls()
        if path is not None:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            if doc.get("schema_version", CONFIG_SCHEMA_VERSION) != CONFIG_SCHEMA_VERSION:
                raise ParameterError(f"unsupported config schema_version "
                                     f"{doc.get('schema_version')}")
            known = {f.name for f in fields(cls)}
            unknown = set(doc) - known
            if unknown:
                raise ParameterError(f"unknown config keys: {sorted(unknown)}")
            for key, value in doc.items():
                setattr(cfg, key, value)
        for key, value in (overrides or {}).items():
            if value is not None:
                setattr(cfg, key, value)
        return cfg

    def resolve_workdir(self) -> Path:
        wd = self.workdir or os.environ.get("GRIDCAST_WORKDIR", "") or "."
        return Path(wd)

    def path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else self.resolve_workdir() / p

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True),
                              encoding="utf-8")


@contextlib.contextmanager
def workdir_lock(workdir: Path):
    workdir.mkdir(parents=True, exist_ok=True)
    lock = workdir / ".gridcast.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError("lock", f"workdir {workdir} is locked by another command "
                                 f"(remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _stage(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# ------------------------------------------------------------------ stages


def _load_frame(config: PipelineConfig) -> pd.DataFrame:
    outages = ingest.parse_outage_csv(config.path("outage_csv"))
    weather = ingest.parse_weather_csv(config.path("weather_csv"))
    return ingest.aggregate_by_date_region(outages, weather)


def _preprocess_frame(config: PipelineConfig, frame: pd.DataFrame,
                      apply_filter: bool = True) -> pd.DataFrame:
    if apply_filter:
        frame = preprocess.quantile_filter(frame, TARGET_COL, config.q_low, config.q_high)
        frame = preprocess.complete_calendar(frame)
    frame = preprocess.add_temporal_features(frame)
    if config.denoise_window > 1:
        frame = preprocess.denoise(frame, WEATHER_FEATURES,
                                   config.denoise_window, config.denoise_sigma)
    return frame


def _train_row_mask(frame: pd.DataFrame, n_in: int, n_out: int,
                    test_fraction: float) -> np.ndarray:
    """True for rows only ever seen by training windows (leakage guard)."""
    mask = np.zeros(len(frame), dtype=bool)
    frame = frame.reset_index(drop=True)
    for _, grp in frame.groupby("region_code", sort=True):
        grp = grp.sort_values("date", kind="mergesort")
        n = len(grp)
        n_samples = n - n_in - n_out + 1
        if n_samples < 1:
            mask[grp.index] = True
            continue
        n_train = int(np.ceil(n_samples * (1.0 - test_fraction)))
        cutoff = n_train + n_in + n_out - 1
        mask[grp.index[:cutoff]] = True
    return mask


SCALE_EXTRA_COLS = ["weather_imputed"] + TEMPORAL_COLS + [TARGET_COL]


def _fit_transforms(config: PipelineConfig, frame: pd.DataFrame):
    train_rows = _train_row_mask(frame, config.n_in, config.n_out, config.test_fraction)
    scaler = preprocess.scale_fit(frame, train_rows,
                                  columns=list(WEATHER_FEATURES) + SCALE_EXTRA_COLS)
    scaled = preprocess.scale_apply(frame, scaler)
    pca = preprocess.pca_fit(scaled.loc[train_rows, WEATHER_FEATURES].to_numpy(dtype=np.float64),
                             config.pca_threshold, feature_names=list(WEATHER_FEATURES))
    return scaler, pca, scaled


def _model_frame(scaled: pd.DataFrame, pca) -> tuple[pd.DataFrame, list[str]]:
    """Replace the weather block with PCA scores; keep the rest."""
    scores = preprocess.pca_transform(scaled[WEATHER_FEATURES].to_numpy(dtype=np.float64), pca)
    out = scaled[ingest.KEY_COLS + SCALE_EXTRA_COLS].copy()
    score_cols = [f"pc_{i + 1}" for i in range(pca.k)]
    for i, col in enumerate(score_cols):
        out[col] = scores[:, i]
    feature_cols = score_cols + SCALE_EXTRA_COLS
    return out, feature_cols


def _write_history(history, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"])])


# ---------------------------------------------------------------- commands


def cmd_synth(config: PipelineConfig) -> list[Path]:
    spec_kwargs = dict(config.synth)
    spec_kwargs.setdefault("seed", config.seed)
    spec = synth.SynthSpec(**spec_kwargs)
    frame, truth = _stage("synth-generate", synth.generate, spec)
    paths = _stage("synth-write", synth.write_synth_csvs, frame, truth,
                   config.resolve_workdir())
    config.dump(config.resolve_workdir() / "effective_config.json")
    return paths


def cmd_moran(config: PipelineConfig) -> spatial.MoranResult:
    coords_path = config.path("coords_csv")
    coords = _stage("moran-coords", _read_coords, coords_path)
    outages = _stage("moran-ingest", ingest.parse_outage_csv, config.path("outage_csv"))

    totals = {}
    for rec in outages:
        totals[rec.region_code] = totals.get(rec.region_code, 0) + rec.outage_count
    # clamp for small region sets; k = n-1 would be a complete (degenerate) graph
    k = max(1, min(config.moran_k, len(coords) - 2))
    weights = _stage("moran-weights", spatial.weights_from_coordinates, coords,
                     config.moran_scheme, k, config.moran_cutoff,
                     config.moran_row_standardize)
    missing = [int(c) for c in weights.region_codes if c not in totals]
    values = np.array([totals.get(code, 0) for code in weights.region_codes], dtype=float)
    if missing:
        print(f"note: {len(missing)} regions have no outage records; using 0 totals",
              file=sys.stderr)
    result = _stage("moran-test", spatial.morans_significance, values, weights,
                    config.n_permutations, config.seed)
    out_path = config.resolve_workdir() / "moran.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(result.to_json() + "\n", encoding="utf-8")
    print(result.to_json())
    return result


def _read_coords(path) -> list[tuple]:
    frame = pd.read_csv(path)
    expected = ["region_code", "x", "y"]
    if list(frame.columns) != expected:
        raise SchemaError(f"{path}: expected columns {expected}, got {list(frame.columns)}")
    return [(int(r.region_code), float(r.x), float(r.y)) for r in frame.itertuples()]


def cmd_train(config: PipelineConfig) -> dict:
    workdir = config.resolve_workdir()
    with workdir_lock(workdir):
        frame = _stage("ingest", _load_frame, config)
        frame = _stage("preprocess", _preprocess_frame, config, frame)
        scaler, pca, scaled = _stage("transform-fit", _fit_transforms, config, frame)
        model_table, feature_cols = _model_frame(scaled, pca)
        sset = _stage("supervised", preprocess.series_to_supervised, model_table,
                      config.n_in, config.n_out, feature_cols)
        train_set, test_set = _stage("split", preprocess.train_test_split, sset,
                                     config.test_fraction)

        model_config = ModelConfig(
            n_features=len(feature_cols), n_out=config.n_out,
            hidden1=config.hidden1, hidden2=config.hidden2,
            dense_size=config.dense_size, head_kind=config.head_kind,
            block1_candidate=config.block1_candidate, block1_output=config.block1_output,
            block2_candidate=config.block2_candidate, block2_output=config.block2_output,
            dropout1=config.dropout1, dropout2=config.dropout2)
        train_config = TrainConfig(
            epochs=config.epochs, batch_size=config.batch_size,
            validation_fraction=config.validation_fraction,
            early_stopping_patience=config.early_stopping_patience,
            seed=config.seed, loss_mode=config.loss_mode,
            learning_rate=config.learning_rate,
            teacher_forcing_ratio=config.teacher_forcing_ratio)
        model = _stage("init", init_params, model_config, config.seed)
        model, history = _stage("train", train, model, train_set, train_config,
                                scaler, TARGET_COL)

        _write_history(history, workdir / "history.csv")
        scaler_path = workdir / "scaler.json"
        scaler_path.write_text(scaler.to_json() + "\n", encoding="utf-8")
        (workdir / "pca.json").write_text(pca.to_json() + "\n", encoding="utf-8")
        extra = {"feature_cols": feature_cols, "n_in": config.n_in,
                 "denoise_window": config.denoise_window,
                 "denoise_sigma": config.denoise_sigma}
        _stage("persist", checkpoint_save, model, workdir / "checkpoint.bin",
               None, train_config, scaler, pca, extra)
        config.dump(workdir / "effective_config.json")

        summary = _stage("evaluate", _score_test_set, model, test_set, scaler)
        (workdir / "metrics.json").write_text(
            metrics.reports_to_json(summary) + "\n", encoding="utf-8")
        final = summary[-2]  # the mean row
        print(json.dumps({"epochs_run": len(history),
                          "best_val_loss": min(h["val_loss"] for h in history),
                          "test_mae": final.mae, "test_rmse": final.rmse}))
        return {"history": history, "reports": summary}


def _score_test_set(model, test_set, scaler):
    rates, _ = model_forecast(model, test_set.inputs, scaler)
    actual = preprocess.scale_invert(test_set.targets, scaler, TARGET_COL)
    frames = []
    for region in np.unique(test_set.region_codes):
        sel = test_set.region_codes == region
        frames.append((int(region), actual[sel].ravel(), rates[sel].ravel()))
    return metrics.report_per_region(frames)


def cmd_forecast(config: PipelineConfig, checkpoint_path=None, as_of: str | None = None) -> pd.DataFrame:
    workdir = config.resolve_workdir()
    ckpt = Path(checkpoint_path) if checkpoint_path else workdir / "checkpoint.bin"
    model, _, _, scaler, pca, extra = _stage("load-checkpoint", checkpoint_load, ckpt)
    n_in = int(extra["n_in"])
    feature_cols = list(extra["feature_cols"])

    frame = _stage("ingest", _load_frame, config)
    frame = _stage("preprocess", _preprocess_frame, config, frame, False)
    scaled = preprocess.scale_apply(frame, scaler)
    model_table, cols = _model_frame(scaled, pca)
    if cols != feature_cols:
        raise StageError("forecast", SchemaError(
            f"feature columns {cols} do not match checkpoint {feature_cols}"))

    if as_of is None:
        as_of = max(frame["date"])
    rows = []
    windows, codes = [], []
    for region, grp in model_table.groupby("region_code", sort=True):
        grp = grp.sort_values("date", kind="mergesort")
        hist = grp[grp["date"] <= as_of]
        if len(hist) < n_in:
            continue
        windows.append(hist[feature_cols].to_numpy(dtype=np.float64)[-n_in:])
        codes.append(int(region))
    if not windows:
        raise StageError("forecast", WindowError(
            f"no region has {n_in} rows of history at or before {as_of}"))
    rates, counts = _stage("predict", model_forecast, model,
                           np.stack(windows), scaler, pca)

    base = pd.Timestamp(as_of)
    for i, region in enumerate(codes):
        for h in range(model.config.n_out):
            rows.append({"region_code": region,
                         "horizon_date": (base + pd.Timedelta(days=h + 1)).strftime("%Y-%m-%d"),
                         "rate": rates[i, h], "count": int(counts[i, h])})
    report = pd.DataFrame(rows)
    out_path = workdir / "forecast.csv"
    report.to_csv(out_path, index=False)

    actual = frame.set_index(["region_code", "date"])[TARGET_COL]
    matched = report.assign(actual=[
        actual.get((r.region_code, r.horizon_date), np.nan) for r in report.itertuples()])
    if matched["actual"].notna().any():
        matched.dropna(subset=["actual"]).to_csv(workdir / "forecast_vs_actual.csv", index=False)
    print(f"wrote {len(report)} forecast rows for {len(codes)} regions to {out_path}")
    return report


def cmd_evaluate(config: PipelineConfig, forecast_csv=None, actuals_csv=None) -> list:
    workdir = config.resolve_workdir()
    fc_path = Path(forecast_csv) if forecast_csv else workdir / "forecast.csv"
    ac_path = Path(actuals_csv) if actuals_csv else config.path("outage_csv")

    fc = _stage("evaluate-read", pd.read_csv, fc_path)
    needed = {"region_code", "horizon_date", "rate"}
    if not needed.issubset(fc.columns):
        raise StageError("evaluate-read", SchemaError(
            f"{fc_path}: forecast csv must have columns {sorted(needed)}"))
    outages = _stage("evaluate-actuals", ingest.parse_outage_csv, ac_path)
    actual = {}
    for rec in outages:
        key = (rec.region_code, rec.date)
        actual[key] = actual.get(key, 0) + rec.outage_count
    known_regions = {rec.region_code for rec in outages}
    dates = sorted({rec.date for rec in outages})
    lo, hi = dates[0], dates[-1]

    offenders = [f"region {int(r.region_code)} @ {r.horizon_date}"
                 for r in fc.itertuples()
                 if int(r.region_code) not in known_regions
                 or not lo <= str(r.horizon_date) <= hi]
    if offenders:
        raise StageError("evaluate-align", SchemaError(
            f"forecast keys outside the actuals coverage: {offenders[:10]}"
            + (" ..." if len(offenders) > 10 else "")))

    frames = []
    for region, grp in fc.groupby("region_code", sort=True):
        x = np.array([actual.get((int(region), str(d)), 0) for d in grp["horizon_date"]],
                     dtype=float)
        frames.append((int(region), x, grp["rate"].to_numpy(dtype=float)))
    reports = metrics.report_per_region(frames)
    (workdir / "metrics.json").write_text(metrics.reports_to_json(reports) + "\n",
                                          encoding="utf-8")
    with (workdir / "metrics_plot.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["region", "metric", "value"])
        for region, metric, value in metrics.reports_to_plot_rows(reports):
            writer.writerow([region, metric, repr(value)])
    print(metrics.reports_to_json(reports))
    return reports


# -------------------------------------------------------------------- main


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridcast",
        description="Per-region multi-horizon power-outage count forecasting.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to a JSON pipeline config")
        p.add_argument("--workdir", help="output directory (default: config, "
                                         "then $GRIDCAST_WORKDIR, then cwd)")
        p.add_argument("--seed", type=int, help="override the pipeline seed")

    p = sub.add_parser("synth", help="generate a synthetic dataset with known rates")
    common(p)

    p = sub.add_parser("moran", help="Moran's I test over per-region outage totals")
    common(p)

    p = sub.add_parser("train", help="run ingest, preprocessing, and training")
    common(p)
    p.add_argument("--horizon", type=int, help="forecast horizon in days (1-7)")
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.add_argument("--loss-mode", choices=["poisson", "mse", "auto"],
                   help="loss selection rule")
    p.add_argument("--head", choices=["exp", "linear"], help="rate head kind")

    p = sub.add_parser("forecast", help="predict future counts from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="path to checkpoint.bin (default: workdir)")
    p.add_argument("--as-of", dest="as_of",
                   help="forecast from this date (default: last date in the data)")

    p = sub.add_parser("evaluate", help="score a forecast CSV against actual outages")
    common(p)
    p.add_argument("--forecast-csv", help="forecast file (default: workdir/forecast.csv)")
    p.add_argument("--actuals-csv", help="outage CSV with actuals (default: config outage_csv)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {"workdir": getattr(args, "workdir", None),
                 "seed": getattr(args, "seed", None),
                 "n_out": getattr(args, "horizon", None),
                 "epochs": getattr(args, "epochs", None),
                 "loss_mode": getattr(args, "loss_mode", None),
                 "head_kind": getattr(args, "head", None)}
    try:
        config = PipelineConfig.load(args.config, overrides)
        if args.command == "synth":
            cmd_synth(config)
        elif args.command == "moran":
            cmd_moran(config)
        elif args.command == "train":
            cmd_train(config)
        elif args.command == "forecast":
            cmd_forecast(config, args.checkpoint, args.as_of)
        elif args.command == "evaluate":
            cmd_evaluate(config, args.forecast_csv, args.actuals_csv)
        return 0
    except StageError as exc:
        print(f"gridcast: {exc}", file=sys.stderr)
        return 2
    except GridcastError as exc:
        print(f"gridcast: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
