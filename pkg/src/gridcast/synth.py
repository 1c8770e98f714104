"""Synthetic outage/weather data with known ground-truth Poisson rates.

Stands in for the proprietary utility dataset: every quantitative claim
about the pipeline is checked against data where the true rate process
lambda = exp(bias + region_bias + sum_f w_f * x_f) is known exactly.
Features follow seasonal AR(1) processes so the sequence model has real
temporal structure to learn.

Emitted files use the exact ingest CSV schemas; outage rows exist only for
days with at least one outage (logs record events, not non-events), which
exercises the zero-completion path of the aggregation step.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import poisson as poisson_dist

from .errors import ParameterError, ShapeError
from .ingest import OUTAGE_HEADER, TARGET_COL, WEATHER_FEATURES, WEATHER_HEADER
from .numerics import make_rng

DEFAULT_WEIGHTS = {
    "wind_speed": 0.04,
    "wind_gust": 0.015,
    "cloud_cover": 0.6,
    "thunderstorm": 0.5,
    "rainfall": 0.12,
    "snow_cover": 0.05,
    "wind_bearing": 0.0,
}

FIRST_REGION_CODE = 79


@dataclass
class SynthSpec:
    n_regions: int = 10
    n_days: int = 400
    seed: int = 0
    start_date: str = "2020-01-01"
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    bias: float = 0.0
    region_bias: list | None = None
    ar_phi: float = 0.8
    feature_noise: float = 1.0   # scales every AR innovation
    seasonal_scale: float = 1.0  # scales every seasonal amplitude
    lambda_max: float = 100.0
    contamination_rate: float = 0.0

    def region_codes(self) -> list[int]:
        return list(range(FIRST_REGION_CODE, FIRST_REGION_CODE + self.n_regions))


def _ar1(rng, n, phi, sigma):
    x = np.zeros(n)
    if sigma > 0:
        innovations = rng.normal(0.0, sigma, size=n)
        x[0] = innovations[0] / math.sqrt(max(1.0 - phi * phi, 1e-12))
        for t in range(1, n):
            x[t] = phi * x[t - 1] + innovations[t]
    return x


def _region_features(rng, spec: SynthSpec) -> pd.DataFrame:
    """Seasonal AR(1) weather processes for one region, range-valid."""
    n = spec.n_days
    day = np.arange(n)
    annual = 2.0 * np.pi * day / 365.25
    phi, noise, seas = spec.ar_phi, spec.feature_noise, spec.seasonal_scale

    wind = 10.0 + seas * 3.0 * np.sin(annual) + _ar1(rng, n, phi, noise * 1.5)
    wind = np.maximum(wind, 0.0)
    gust = wind * 1.3 + np.abs(_ar1(rng, n, phi, noise * 1.0))
    bearing = np.mod(180.0 + 120.0 * np.sin(annual / 2.0) + _ar1(rng, n, phi, noise * 20.0), 360.0)
    cloud = np.clip(0.55 + seas * 0.25 * np.sin(annual + 1.0) + _ar1(rng, n, phi, noise * 0.12),
                    0.0, 1.0)
    snow = np.maximum(seas * 1.5 * np.sin(annual + np.pi) - 0.5
                      + _ar1(rng, n, phi, noise * 0.4), 0.0)
    storm_p = np.clip(0.05 + 0.10 * np.sin(annual), 0.01, 0.9)
    storm = (rng.random(n) < storm_p).astype(np.float64)
    rain = np.maximum(1.0 + seas * 0.5 * np.sin(annual) + _ar1(rng, n, phi, noise * 0.6), 0.0)

    return pd.DataFrame({
        "wind_speed": wind, "wind_gust": gust, "wind_bearing": bearing,
        "cloud_cover": cloud, "snow_cover": snow, "thunderstorm": storm,
        "rainfall": rain,
    })


def rates_for_frame(features: pd.DataFrame, weights: dict, bias: float,
                    region_offset: float = 0.0) -> np.ndarray:
    """lambda = exp(bias + offset + sum_f w_f * x_f) for each row."""
    log_rate = np.full(len(features), bias + region_offset, dtype=np.float64)
    for name, w in weights.items():
        if w == 0.0:
            continue
        if name not in features.columns:
            raise ParameterError(f"weight refers to unknown feature {name!r}")
        log_rate += w * features[name].to_numpy(dtype=np.float64)
    return np.exp(log_rate)


def generate(spec: SynthSpec) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Simulate the event frame and its truth record.

    Returns (frame, truth): frame has the aggregated-table layout (key
    columns, weather features, weather_imputed=0, y); truth holds the true
    rate per (date, region_code).
    """
    if spec.n_regions < 1 or spec.n_days < 1:
        raise ParameterError("n_regions and n_days must be >= 1")
    if spec.region_bias is not None and len(spec.region_bias) != spec.n_regions:
        raise ParameterError(f"region_bias must have {spec.n_regions} entries")
    start = dt.date.fromisoformat(spec.start_date)
    dates = [(start + dt.timedelta(days=int(d))).isoformat() for d in range(spec.n_days)]

    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_regions)
    frames, truths = [], []
    for r, code in enumerate(spec.region_codes()):
        rng = np.random.Generator(np.random.PCG64(seeds[r]))
        feats = _region_features(rng, spec)
        offset = 0.0 if spec.region_bias is None else float(spec.region_bias[r])
        lam = rates_for_frame(feats, spec.weights, spec.bias, offset)
        if lam.max() > spec.lambda_max:
            worst_row = int(np.argmax(lam))
            contrib = {name: abs(w * feats[name].iloc[worst_row])
                       for name, w in spec.weights.items() if w != 0.0}
            culprit = max(contrib, key=contrib.get) if contrib else "bias"
            raise ParameterError(
                f"rate {lam.max():.3g} exceeds lambda_max={spec.lambda_max} at region "
                f"{code}, day {worst_row}; largest weighted contribution from {culprit!r}")
        y = rng.poisson(lam)
        if spec.contamination_rate > 0:
            y = y + (rng.random(spec.n_days) < spec.contamination_rate).astype(np.int64)
        region_frame = feats.copy()
        region_frame.insert(0, "region_code", code)
        region_frame.insert(0, "date", dates)
        region_frame["weather_imputed"] = 0
        region_frame[TARGET_COL] = y.astype(np.int64)
        frames.append(region_frame)
        truths.append(pd.DataFrame({"date": dates, "region_code": code, "lam": lam}))

    frame = pd.concat(frames, ignore_index=True)
    frame = frame.sort_values(["date", "region_code"], kind="mergesort").reset_index(drop=True)
    truth = pd.concat(truths, ignore_index=True)
    truth = truth.sort_values(["date", "region_code"], kind="mergesort").reset_index(drop=True)
    return frame, truth


def oracle_nll(truth_rates, counts) -> float:
    """Mean Poisson NLL under the true rates: the irreducible loss floor.

    Deliberately computed with scipy's log-pmf so it stays independent of
    the model module's hand-written loss.
    """
    lam = np.asarray(truth_rates, dtype=np.float64).ravel()
    y = np.asarray(counts, dtype=np.float64).ravel()
    if lam.shape != y.shape:
        raise ShapeError(f"rates shape {lam.shape} != counts shape {y.shape}")
    return float(np.mean(-poisson_dist.logpmf(y, lam)))


def write_synth_csvs(frame: pd.DataFrame, truth: pd.DataFrame, outdir) -> list[Path]:
    """Emit outage.csv / weather.csv / truth.csv in the ingest schemas.

    Only days with y > 0 get outage rows, mirroring how outage management
    systems log events.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    outage_path = outdir / "outage.csv"
    weather_path = outdir / "weather.csv"
    truth_path = outdir / "truth.csv"

    with outage_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(OUTAGE_HEADER)
        for row in frame.itertuples(index=False):
            y = getattr(row, TARGET_COL)
            if y > 0:
                writer.writerow([row.date, row.region_code, int(y), "weather"])

    with weather_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(WEATHER_HEADER)
        for row in frame.itertuples(index=False):
            writer.writerow([row.date, row.region_code]
                            + [int(getattr(row, c)) if c == "thunderstorm"
                               else float(getattr(row, c)) for c in WEATHER_FEATURES])

    truth.to_csv(truth_path, index=False)
    return [outage_path, weather_path, truth_path]


def region_grid_coords(n_regions: int, jitter: float = 0.0, seed: int = 0):
    """(region_code, x, y) on a near-square grid, optionally jittered."""
    side = int(math.ceil(math.sqrt(n_regions)))
    rng = make_rng(seed)
    coords = []
    for idx in range(n_regions):
        x, y = float(idx % side), float(idx // side)
        if jitter > 0:
            x += rng.uniform(-jitter, jitter)
            y += rng.uniform(-jitter, jitter)
        coords.append((FIRST_REGION_CODE + idx, x, y))
    return coords
