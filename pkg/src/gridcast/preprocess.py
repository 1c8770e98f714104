"""Feature preparation: filtering, temporal features, denoising, scaling,
supervised reshaping, chronological splitting, and PCA.

All fitting (scaler min/max, PCA) happens on training rows only; the fitted
transforms serialize to versioned JSON so a forecast run can reuse them
exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (DegenerateInputError, ParameterError, SchemaError,
                     WindowError)
from .ingest import KEY_COLS, TARGET_COL, WEATHER_FEATURES
from .numerics import eig_sym

TEMPORAL_COLS = ["day_of_week", "month", "season"]
MAX_HORIZON = 7
SCHEMA_VERSION = 1

# meteorological seasons: DJF=0 winter, MAM=1 spring, JJA=2 summer, SON=3 fall
_MONTH_TO_SEASON = {12: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1,
                    6: 2, 7: 2, 8: 2, 9: 3, 10: 3, 11: 3}


def quantile_filter(frame: pd.DataFrame, column: str,
                    q_low: float = 0.25, q_high: float = 0.99) -> pd.DataFrame:
    """Keep rows whose column value lies in [Q(q_low), Q(q_high)] inclusive.

    Quantiles use linear interpolation (type 7).  A constant column cannot
    be filtered meaningfully: a warning is issued and the frame returned
    unchanged.
    """
    if column not in frame.columns:
        raise SchemaError(f"column {column!r} not present in frame")
    if not (0.0 <= q_low <= q_high <= 1.0):
        raise ParameterError(f"quantile bounds must satisfy 0 <= {q_low} <= {q_high} <= 1")
    values = frame[column].to_numpy(dtype=np.float64)
    if np.unique(values).size < 2:
        warnings.warn(f"column {column!r} is constant; quantile filter is degenerate, "
                      "frame returned unchanged", stacklevel=2)
        return frame.copy()
    lo = float(np.quantile(values, q_low))
    hi = float(np.quantile(values, q_high))
    keep = (values >= lo) & (values <= hi)
    return frame.loc[keep].reset_index(drop=True)


def add_temporal_features(frame: pd.DataFrame) -> pd.DataFrame:
    """Append day_of_week (Monday=0), month (1-12), season (0-3) columns."""
    out = frame.copy()
    dates = pd.to_datetime(out["date"], format="%Y-%m-%d")
    out["day_of_week"] = dates.dt.dayofweek.astype(np.int64)
    out["month"] = dates.dt.month.astype(np.int64)
    out["season"] = dates.dt.month.map(_MONTH_TO_SEASON).astype(np.int64)
    return out


def complete_calendar(frame: pd.DataFrame) -> pd.DataFrame:
    """Fill per-region date gaps so lagged windows see contiguous time.

    Inserted days carry y = 0, region-mean weather, and weather_imputed = 1.
    """
    pieces = []
    for region, grp in frame.groupby("region_code", sort=True):
        grp = grp.sort_values("date", kind="mergesort")
        dates = pd.to_datetime(grp["date"], format="%Y-%m-%d")
        full = pd.date_range(dates.min(), dates.max(), freq="D")
        if len(full) == len(grp):
            pieces.append(grp)
            continue
        grp = grp.set_index(dates).reindex(full)
        missing = grp["date"].isna()
        grp["date"] = grp.index.strftime("%Y-%m-%d")
        grp["region_code"] = region
        grp[TARGET_COL] = grp[TARGET_COL].fillna(0)
        if "weather_imputed" in grp.columns:
            grp.loc[missing, "weather_imputed"] = 1
        fill_cols = [c for c in grp.columns
                     if c not in KEY_COLS + [TARGET_COL] and grp[c].dtype.kind in "fi"]
        grp[fill_cols] = grp[fill_cols].fillna(grp.loc[~missing, fill_cols].mean())
        pieces.append(grp.reset_index(drop=True))
    out = pd.concat(pieces, ignore_index=True)
    out = out.sort_values(KEY_COLS, kind="mergesort").reset_index(drop=True)
    out[TARGET_COL] = out[TARGET_COL].astype(np.int64)
    out["region_code"] = out["region_code"].astype(np.int64)
    return out


def gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    """Normalized discrete kernel w_d = exp(-(d/sigma)^2), d = -h..h."""
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 1, got {window}")
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    half = window // 2
    d = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-((d / sigma) ** 2))
    return w / w.sum()


def denoise(frame: pd.DataFrame, columns, window: int = 5,
            sigma_kernel: float = 1.0) -> pd.DataFrame:
    """Smooth the listed feature columns along time within each region.

    Edges use the truncated kernel renormalized over the valid support.
    The target column is never smoothed.
    """
    columns = list(columns)
    if TARGET_COL in columns:
        raise ParameterError(f"refusing to denoise the target column {TARGET_COL!r}")
    for col in columns:
        if col not in frame.columns:
            raise SchemaError(f"column {col!r} not present in frame")
    kernel = gaussian_kernel(window, sigma_kernel)
    half = window // 2
    out = frame.copy()
    for _, grp in out.groupby("region_code", sort=False):
        grp_sorted = grp.sort_values("date", kind="mergesort")
        idx = grp_sorted.index
        n = len(idx)
        for col in columns:
            x = grp_sorted[col].to_numpy(dtype=np.float64)
            num = np.zeros(n)
            den = np.zeros(n)
            for j, w in enumerate(kernel):
                d = j - half
                src = slice(max(0, d), n + min(0, d))
                dst = slice(max(0, -d), n + min(0, -d))
                num[dst] += w * x[src]
                den[dst] += w
            out.loc[idx, col] = num / den
    return out


@dataclass
class ScalerParams:
    """Per-column min/max fitted on training rows only."""

    columns: list[str]
    mins: dict[str, float]
    maxs: dict[str, float]

    def to_json(self) -> str:
        return json.dumps({"schema_version": SCHEMA_VERSION, "columns": self.columns,
                           "mins": self.mins, "maxs": self.maxs})

    @classmethod
    def from_json(cls, text: str) -> "ScalerParams":
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"unsupported scaler schema_version {doc.get('schema_version')}")
        return cls(columns=list(doc["columns"]), mins=dict(doc["mins"]), maxs=dict(doc["maxs"]))


def scale_fit(frame: pd.DataFrame, train_rows, columns=None) -> ScalerParams:
    """Min/max per column over the training rows only."""
    sub = frame.loc[train_rows]
    if len(sub) == 0:
        raise ParameterError("scale_fit requires at least one training row")
    if columns is None:
        columns = [c for c in frame.columns
                   if c not in KEY_COLS and frame[c].dtype.kind in "fi"]
    mins, maxs = {}, {}
    for col in columns:
        if col not in frame.columns:
            raise SchemaError(f"column {col!r} not present in frame")
        vals = sub[col].to_numpy(dtype=np.float64)
        mins[col] = float(vals.min())
        maxs[col] = float(vals.max())
    return ScalerParams(columns=list(columns), mins=mins, maxs=maxs)


def scale_apply(frame: pd.DataFrame, params: ScalerParams) -> pd.DataFrame:
    """Map fitted columns to (x - min)/(max - min); constant columns to 0.

    Out-of-range values (test rows beyond the training extremes) are kept
    as-is: no clamping, extremes are the events of interest.
    """
    out = frame.copy()
    for col in params.columns:
        if col not in out.columns:
            raise SchemaError(f"column {col!r} not present in frame")
        lo, hi = params.mins[col], params.maxs[col]
        x = out[col].to_numpy(dtype=np.float64)
        out[col] = np.zeros_like(x) if hi == lo else (x - lo) / (hi - lo)
    return out


def scale_invert(values, params: ScalerParams, column: str):
    """Exact algebraic inverse of scale_apply for non-constant columns."""
    if column not in params.columns:
        raise SchemaError(f"column {column!r} was not fitted by this scaler")
    lo, hi = params.mins[column], params.maxs[column]
    values = np.asarray(values, dtype=np.float64)
    out = np.full_like(values, lo) if hi == lo else values * (hi - lo) + lo
    return out if out.ndim else float(out)


@dataclass
class SupervisedSet:
    """Lagged windows (samples, n_in, features) with (samples, n_out) targets.

    Windows never cross region boundaries.  ``target_dates`` holds the date
    of each sample's first forecast step, which orders samples in time.
    """

    inputs: np.ndarray
    targets: np.ndarray
    n_in: int
    n_out: int
    feature_names: list[str]
    region_codes: np.ndarray = field(default=None)
    target_dates: np.ndarray = field(default=None)

    def __len__(self):
        return self.inputs.shape[0]


def series_to_supervised(frame: pd.DataFrame, n_in: int, n_out: int,
                         feature_cols=None) -> SupervisedSet:
    """Slide (n_in -> n_out) windows over each region's day-ordered series.

    Sample count per region is len - n_in - n_out + 1; regions too short to
    yield a single window are skipped with a warning.
    """
    if n_in < 1:
        raise ParameterError(f"n_in must be >= 1, got {n_in}")
    if not 1 <= n_out <= MAX_HORIZON:
        raise ParameterError(f"n_out must be in [1, {MAX_HORIZON}], got {n_out}")
    if feature_cols is None:
        feature_cols = [c for c in frame.columns
                        if c not in KEY_COLS and frame[c].dtype.kind in "fi"]
    for col in list(feature_cols) + [TARGET_COL]:
        if col not in frame.columns:
            raise SchemaError(f"column {col!r} not present in frame")

    xs, ys, regions, dates = [], [], [], []
    for region, grp in frame.groupby("region_code", sort=True):
        grp = grp.sort_values("date", kind="mergesort")
        _check_contiguous(grp, region)
        n = len(grp)
        n_samples = n - n_in - n_out + 1
        if n_samples < 1:
            warnings.warn(f"region {region}: series of length {n} too short for "
                          f"n_in={n_in}, n_out={n_out}; skipped", stacklevel=2)
            continue
        feats = grp[list(feature_cols)].to_numpy(dtype=np.float64)
        target = grp[TARGET_COL].to_numpy(dtype=np.float64)
        date_vals = grp["date"].to_numpy()
        for s in range(n_samples):
            xs.append(feats[s:s + n_in])
            ys.append(target[s + n_in:s + n_in + n_out])
            regions.append(region)
            dates.append(date_vals[s + n_in])
    if not xs:
        raise ParameterError("all regions were too short; empty supervised set")
    return SupervisedSet(inputs=np.stack(xs), targets=np.stack(ys),
                         n_in=n_in, n_out=n_out, feature_names=list(feature_cols),
                         region_codes=np.asarray(regions), target_dates=np.asarray(dates))


def _check_contiguous(grp: pd.DataFrame, region) -> None:
    dates = pd.to_datetime(grp["date"], format="%Y-%m-%d")
    if len(dates) > 1:
        gaps = dates.diff().dropna().dt.days.to_numpy()
        if (gaps != 1).any():
            raise WindowError(f"region {region}: date series has gaps; run "
                              "complete_calendar before windowing")


def train_test_split(sset: SupervisedSet,
                     test_fraction: float = 0.2) -> tuple[SupervisedSet, SupervisedSet]:
    """Chronological split per region: test is the final fraction of samples.

    Train size is ceil(n * (1 - fraction)) per region, so e.g. 3 samples at
    0.5 split 2/1.  Never random, since shuffling would leak future values.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    train_idx, test_idx = [], []
    for region in np.unique(sset.region_codes):
        idx = np.flatnonzero(sset.region_codes == region)
        order = np.argsort(sset.target_dates[idx], kind="stable")
        idx = idx[order]
        n_train = int(np.ceil(len(idx) * (1.0 - test_fraction)))
        train_idx.extend(idx[:n_train])
        test_idx.extend(idx[n_train:])
    if not train_idx or not test_idx:
        raise ParameterError(f"test_fraction={test_fraction} leaves an empty side "
                             f"({len(train_idx)} train / {len(test_idx)} test)")
    return _subset(sset, np.asarray(train_idx)), _subset(sset, np.asarray(test_idx))


def _subset(sset: SupervisedSet, idx: np.ndarray) -> SupervisedSet:
    return SupervisedSet(inputs=sset.inputs[idx], targets=sset.targets[idx],
                         n_in=sset.n_in, n_out=sset.n_out,
                         feature_names=sset.feature_names,
                         region_codes=sset.region_codes[idx],
                         target_dates=sset.target_dates[idx])


@dataclass
class PcaModel:
    """Centering mean, all eigenvector columns, and the retained count k."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    k: int
    feature_names: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "feature_names": self.feature_names,
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "k": self.k,
        })

    @classmethod
    def from_json(cls, text: str) -> "PcaModel":
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"unsupported PCA schema_version {doc.get('schema_version')}")
        return cls(mean=np.asarray(doc["mean"], dtype=np.float64),
                   components=np.asarray(doc["components"], dtype=np.float64),
                   explained_variance=np.asarray(doc["explained_variance"], dtype=np.float64),
                   k=int(doc["k"]), feature_names=list(doc["feature_names"]))


def pca_fit(inputs: np.ndarray, variance_threshold: float = 0.95,
            feature_names=None) -> PcaModel:
    """Eigendecompose the training covariance (denominator n-1).

    Retains the smallest k whose cumulative explained variance reaches the
    threshold.  All component columns are kept on the model so a full
    reconstruction stays possible.
    """
    if not 0.0 < variance_threshold <= 1.0:
        raise ParameterError(f"variance_threshold must be in (0, 1], got {variance_threshold}")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ParameterError(f"pca_fit requires a 2-D matrix with >= 2 rows, got {x.shape}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    vals, vecs = eig_sym(cov)
    vals = np.maximum(vals, 0.0)  # clip fp-negative eigenvalues
    total = vals.sum()
    if total == 0.0:
        raise DegenerateInputError("all feature columns are constant; PCA is undefined")
    ratios = np.cumsum(vals) / total
    k = int(np.searchsorted(ratios, variance_threshold - 1e-12) + 1)
    k = min(k, len(vals))
    return PcaModel(mean=mean, components=vecs, explained_variance=vals, k=k,
                    feature_names=list(feature_names) if feature_names is not None else [])


def pca_transform(x: np.ndarray, model: PcaModel, k: int | None = None) -> np.ndarray:
    """Project centered rows onto the first k components."""
    k = model.k if k is None else k
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise SchemaError(f"expected {model.mean.shape[0]} features, got {x.shape[-1]}")
    return (x - model.mean) @ model.components[:, :k]


def pca_inverse(scores: np.ndarray, model: PcaModel) -> np.ndarray:
    """Map scores back to the original feature space (exact when k = d)."""
    scores = np.asarray(scores, dtype=np.float64)
    k = scores.shape[-1]
    return scores @ model.components[:, :k].T + model.mean
