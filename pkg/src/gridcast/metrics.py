"""Forecast error metrics with explicit zero-count handling.

Outage series are zero-heavy, so the percentage metrics (MAPE, MdAPE) skip
points whose actual value is zero and report how many were skipped instead
of inflating the score with an epsilon.  SMAPE uses the 2/n * |dx/(x+xhat)|
definition, which is bounded in [0, 200] percent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError, UndefinedMetricError


def _pair(x, xhat):
    x = np.asarray(x, dtype=np.float64).ravel()
    xhat = np.asarray(xhat, dtype=np.float64).ravel()
    if x.size == 0:
        raise ParameterError("metric requires at least one point")
    if x.size != xhat.size:
        raise ParameterError(f"length mismatch: {x.size} actuals vs {xhat.size} predictions")
    return x, xhat


def mae(x, xhat) -> float:
    x, xhat = _pair(x, xhat)
    return float(np.mean(np.abs(xhat - x)))


def mape(x, xhat) -> float:
    """Mean absolute percentage error over points with nonzero actuals."""
    x, xhat = _pair(x, xhat)
    keep = x != 0
    if not keep.any():
        raise UndefinedMetricError("MAPE undefined: all actual values are zero")
    return float(np.mean(np.abs(x[keep] - xhat[keep]) / x[keep]) * 100.0)


def smape(x, xhat) -> float:
    """Symmetric MAPE in [0, 200]; terms with x + xhat == 0 contribute 0."""
    x, xhat = _pair(x, xhat)
    denom = x + xhat
    terms = np.zeros_like(x)
    nz = denom != 0
    terms[nz] = np.abs((x[nz] - xhat[nz]) / denom[nz])
    return float(2.0 / x.size * np.sum(terms) * 100.0)


def mdape(x, xhat) -> float:
    """Median absolute percentage error over points with nonzero actuals."""
    x, xhat = _pair(x, xhat)
    keep = x != 0
    if not keep.any():
        raise UndefinedMetricError("MdAPE undefined: all actual values are zero")
    return float(np.median(np.abs(x[keep] - xhat[keep]) / x[keep]) * 100.0)


def rmse(x, xhat) -> float:
    x, xhat = _pair(x, xhat)
    return float(np.sqrt(np.mean((x - xhat) ** 2)))


def r2(x, xhat) -> float:
    x, xhat = _pair(x, xhat)
    ss_tot = float(np.sum((x - x.mean()) ** 2))
    if ss_tot == 0:
        raise UndefinedMetricError("R^2 undefined: actual values have zero variance")
    ss_res = float(np.sum((x - xhat) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass
class MetricsReport:
    """Per-region scores; percentage metrics are None when undefined."""

    region_code: object
    n_points: int
    n_excluded_zero_actual: int
    mae: float | None = None
    mape_pct: float | None = None
    smape_pct: float | None = None
    mdape_pct: float | None = None
    rmse: float | None = None
    r2: float | None = None
    notes: str = ""


_METRIC_FIELDS = ("mae", "mape_pct", "smape_pct", "mdape_pct", "rmse", "r2")

_METRIC_FUNCS = {
    "mae": mae,
    "mape_pct": mape,
    "smape_pct": smape,
    "mdape_pct": mdape,
    "rmse": rmse,
    "r2": r2,
}


def score_region(region_code, x, xhat) -> MetricsReport:
    """All six metrics for one region; undefined ones become None + a note."""
    x, xhat = _pair(x, xhat)
    report = MetricsReport(
        region_code=region_code,
        n_points=int(x.size),
        n_excluded_zero_actual=int(np.sum(x == 0)),
    )
    reasons = []
    for field, func in _METRIC_FUNCS.items():
        try:
            setattr(report, field, func(x, xhat))
        except UndefinedMetricError as exc:
            reasons.append(f"{field}: {exc}")
    report.notes = "; ".join(reasons)
    return report


def report_per_region(frames) -> list[MetricsReport]:
    """Score every (region, actuals, predictions) triple plus an aggregate row.

    The aggregate row (region_code="ALL") carries the mean across regions;
    a companion row (region_code="ALL_STD") carries the population standard
    deviation.  Metrics undefined for a region are skipped in the aggregate.
    """
    frames = list(frames)
    if not frames:
        raise ParameterError("report_per_region requires at least one region")
    reports = [score_region(region, x, xhat) for region, x, xhat in frames]

    mean_row = MetricsReport(
        region_code="ALL",
        n_points=sum(r.n_points for r in reports),
        n_excluded_zero_actual=sum(r.n_excluded_zero_actual for r in reports),
    )
    std_row = MetricsReport(region_code="ALL_STD", n_points=mean_row.n_points,
                            n_excluded_zero_actual=mean_row.n_excluded_zero_actual)
    for field in _METRIC_FIELDS:
        vals = [getattr(r, field) for r in reports if getattr(r, field) is not None]
        if vals:
            setattr(mean_row, field, float(np.mean(vals)))
            setattr(std_row, field, float(np.std(vals)))  # population std
    return reports + [mean_row, std_row]


def reports_to_json(reports: list[MetricsReport]) -> str:
    return json.dumps([asdict(r) for r in reports], indent=2)


def reports_to_plot_rows(reports: list[MetricsReport]) -> list[tuple]:
    """Long-form (region, metric, value) rows for plotting tools."""
    rows = []
    for r in reports:
        for field in _METRIC_FIELDS:
            val = getattr(r, field)
            if val is not None:
                rows.append((r.region_code, field, val))
    return rows
