"""CSV ingestion and the (date, region) aggregation step.

Input schemas (UTF-8, comma-delimited, ISO-8601 dates):

* outage file:  ``date,region_code,outage_count,cause``
* weather file: ``date,region_code,wind_speed,wind_gust,wind_bearing,
  cloud_cover,snow_cover,thunderstorm,rainfall``

The working table ("event frame") is a pandas DataFrame keyed by
(date, region_code) with one row per key, weather feature columns, an
integer target column ``y``, and a ``weather_imputed`` indicator.  Dates are
stored as ISO strings so serialization is byte-deterministic.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import CsvFormatError, EmptyJoinError, SchemaError

OUTAGE_HEADER = ["date", "region_code", "outage_count", "cause"]
WEATHER_HEADER = ["date", "region_code", "wind_speed", "wind_gust", "wind_bearing",
                  "cloud_cover", "snow_cover", "thunderstorm", "rainfall"]
WEATHER_FEATURES = WEATHER_HEADER[2:]
CAUSES = ("weather", "animal", "car_pole", "unique", "non_outage", "unknown")
KEY_COLS = ["date", "region_code"]
TARGET_COL = "y"


@dataclass(frozen=True)
class OutageRecord:
    date: str
    region_code: int
    outage_count: int
    cause: str = "unknown"


@dataclass(frozen=True)
class WeatherRecord:
    date: str
    region_code: int
    wind_speed: float
    wind_gust: float
    wind_bearing: float
    cloud_cover: float
    snow_cover: float
    thunderstorm: int
    rainfall: float


def _norm_date(raw: str, line: int) -> str:
    try:
        return dt.date.fromisoformat(raw.strip()).isoformat()
    except ValueError as exc:
        raise CsvFormatError(f"unparseable date {raw!r}: {exc}", line=line, column="date") from None


def _parse_num(raw: str, line: int, column: str, kind=float):
    try:
        return kind(raw)
    except ValueError:
        raise CsvFormatError(f"expected a number, got {raw!r}", line=line, column=column) from None


def _open_rows(path, expected_header):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: file is empty, expected header "
                                 f"{','.join(expected_header)}") from None
        header = [h.strip() for h in header]
        if header != expected_header:
            raise CsvFormatError(f"{path}: header {header} does not match expected "
                                 f"{expected_header}")
        yield from enumerate(reader, start=2)


def parse_outage_csv(path) -> list[OutageRecord]:
    records = []
    for line, row in _open_rows(path, OUTAGE_HEADER):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(OUTAGE_HEADER):
            raise CsvFormatError(f"expected {len(OUTAGE_HEADER)} fields, got {len(row)}", line=line)
        date = _norm_date(row[0], line)
        region = _parse_num(row[1], line, "region_code", int)
        count = _parse_num(row[2], line, "outage_count", int)
        if count < 0:
            raise CsvFormatError(f"outage_count must be >= 0, got {count}",
                                 line=line, column="outage_count")
        cause = row[3].strip() or "unknown"
        if cause not in CAUSES:
            raise CsvFormatError(f"unknown cause {cause!r}, expected one of {CAUSES}",
                                 line=line, column="cause")
        records.append(OutageRecord(date, region, count, cause))
    return records


_WEATHER_RANGE_CHECKS = {
    "wind_bearing": lambda v: 0.0 <= v < 360.0,
    "cloud_cover": lambda v: 0.0 <= v <= 1.0,
    "snow_cover": lambda v: v >= 0.0,
    "rainfall": lambda v: v >= 0.0,
}


def parse_weather_csv(path) -> list[WeatherRecord]:
    records = []
    for line, row in _open_rows(path, WEATHER_HEADER):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(WEATHER_HEADER):
            raise CsvFormatError(f"expected {len(WEATHER_HEADER)} fields, got {len(row)}", line=line)
        date = _norm_date(row[0], line)
        region = _parse_num(row[1], line, "region_code", int)
        values = {}
        for col, raw in zip(WEATHER_HEADER[2:], row[2:]):
            values[col] = _parse_num(raw, line, col)
            check = _WEATHER_RANGE_CHECKS.get(col)
            if check and not check(values[col]):
                raise CsvFormatError(f"{col} value {values[col]} out of range",
                                     line=line, column=col)
        if values["thunderstorm"] not in (0.0, 1.0):
            raise CsvFormatError(f"thunderstorm must be 0 or 1, got {values['thunderstorm']}",
                                 line=line, column="thunderstorm")
        values["thunderstorm"] = int(values["thunderstorm"])
        records.append(WeatherRecord(date, region, **values))
    return records


def aggregate_by_date_region(outages: list[OutageRecord],
                             weather: list[WeatherRecord]) -> pd.DataFrame:
    """GroupBy (date, region): sum outage counts, mean weather, max thunderstorm.

    Keys seen only in the weather data become explicit zero-outage rows.
    Keys seen only in the outage data get weather imputed by the region-wise
    historical mean and are flagged via ``weather_imputed``.
    """
    out_keys = {(r.date, r.region_code) for r in outages}
    wx_keys = {(r.date, r.region_code) for r in weather}
    if not out_keys & wx_keys:
        raise EmptyJoinError("no overlapping (date, region_code) keys between "
                             "outage and weather data")

    wx = pd.DataFrame([r.__dict__ for r in weather])
    agg_ops = {c: "mean" for c in WEATHER_FEATURES}
    agg_ops["thunderstorm"] = "max"
    wx_agg = wx.groupby(KEY_COLS, as_index=False).agg(agg_ops)

    out = pd.DataFrame([{"date": r.date, "region_code": r.region_code,
                         "outage_count": r.outage_count} for r in outages])
    out_agg = out.groupby(KEY_COLS, as_index=False)["outage_count"].sum()
    out_agg = out_agg.rename(columns={"outage_count": TARGET_COL})

    frame = wx_agg.merge(out_agg, on=KEY_COLS, how="outer")
    frame[TARGET_COL] = frame[TARGET_COL].fillna(0).astype(np.int64)

    missing_wx = frame["wind_speed"].isna()
    frame["weather_imputed"] = missing_wx.astype(np.int64)
    if missing_wx.any():
        region_means = wx.groupby("region_code")[WEATHER_FEATURES].mean()
        global_means = wx[WEATHER_FEATURES].mean()
        for idx in frame.index[missing_wx]:
            region = frame.at[idx, "region_code"]
            fill = region_means.loc[region] if region in region_means.index else global_means
            for col in WEATHER_FEATURES:
                frame.at[idx, col] = fill[col]

    frame["thunderstorm"] = frame["thunderstorm"].astype(np.float64)
    frame = frame.sort_values(KEY_COLS, kind="mergesort").reset_index(drop=True)
    return frame[KEY_COLS + WEATHER_FEATURES + ["weather_imputed", TARGET_COL]]


def merge_frames(base: pd.DataFrame, agg: pd.DataFrame,
                 suffix: str = "_agg") -> pd.DataFrame:
    """Left-join aggregate columns onto base; base row count is preserved.

    Aggregate value columns are appended with ``suffix``.  Rows without a
    key match get region-mean imputed values and ``merge_imputed`` = 1.
    """
    for frame, name in ((base, "base"), (agg, "agg")):
        for col in KEY_COLS:
            if col not in frame.columns:
                raise SchemaError(f"{name} frame is missing key column {col!r}")
    value_cols = [c for c in agg.columns if c not in KEY_COLS]
    renamed = {c: c + suffix for c in value_cols}
    clash = set(renamed.values()) & set(base.columns)
    if clash:
        raise SchemaError(f"suffixed columns collide with base columns: {sorted(clash)}")

    right = agg[KEY_COLS + value_cols].rename(columns=renamed)
    merged = base.merge(right, on=KEY_COLS, how="left")
    new_cols = list(renamed.values())
    unmatched = merged[new_cols].isna().all(axis=1) if new_cols else pd.Series(False, index=merged.index)
    merged["merge_imputed"] = unmatched.astype(np.int64)
    if new_cols and unmatched.any() and not agg.empty:
        by_region = agg.groupby("region_code")[value_cols].mean().rename(columns=renamed)
        for idx in merged.index[unmatched]:
            region = merged.at[idx, "region_code"]
            if region in by_region.index:
                for col in new_cols:
                    merged.at[idx, col] = by_region.at[region, col]
    return merged


def write_event_csv(frame: pd.DataFrame, path) -> None:
    """Canonical CSV: key columns first, the rest sorted lexicographically."""
    cols = KEY_COLS + sorted(c for c in frame.columns if c not in KEY_COLS)
    ordered = frame[cols].sort_values(KEY_COLS, kind="mergesort").reset_index(drop=True)
    ordered.to_csv(path, index=False)


def read_event_csv(path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    for col in KEY_COLS:
        if col not in frame.columns:
            raise SchemaError(f"{path}: missing key column {col!r}")
    frame["date"] = frame["date"].astype(str)
    return frame
