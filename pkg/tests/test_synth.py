import math

import numpy as np
import pandas as pd
import pytest

from gridcast.errors import ParameterError, ShapeError
from gridcast.ingest import (aggregate_by_date_region, parse_outage_csv,
                             parse_weather_csv)
from gridcast.synth import (SynthSpec, generate, oracle_nll, rates_for_frame,
                            region_grid_coords, write_synth_csvs)


class TestGenerate:
    def test_zero_weights_unit_rate(self):
        spec = SynthSpec(n_regions=10, n_days=1000, weights={}, bias=0.0, seed=5)
        frame, truth = generate(spec)
        np.testing.assert_array_equal(truth["lam"], 1.0)
        assert len(frame) == 10_000
        assert 0.97 <= frame["y"].mean() <= 1.03

    def test_seed_reproducibility(self):
        spec = SynthSpec(n_regions=3, n_days=50, seed=9)
        a_frame, a_truth = generate(spec)
        b_frame, b_truth = generate(spec)
        pd.testing.assert_frame_equal(a_frame, b_frame)
        pd.testing.assert_frame_equal(a_truth, b_truth)

    def test_counts_are_non_negative_integers(self):
        frame, _ = generate(SynthSpec(n_regions=2, n_days=200, seed=1))
        assert frame["y"].dtype.kind == "i"
        assert (frame["y"] >= 0).all()

    def test_rate_doubles_with_log2_weight(self):
        features = pd.DataFrame({"wind_speed": [0.0, 1.0]})
        lam = rates_for_frame(features, {"wind_speed": math.log(2.0)}, bias=0.0)
        assert lam[1] == pytest.approx(2.0 * lam[0], rel=1e-15)
        assert lam[0] == 1.0

    def test_unknown_weight_feature(self):
        with pytest.raises(ParameterError):
            rates_for_frame(pd.DataFrame({"a": [1.0]}), {"b": 1.0}, 0.0)

    def test_lambda_overflow_names_culprit(self):
        spec = SynthSpec(n_regions=1, n_days=30, seed=2,
                         weights={"wind_speed": 2.0}, bias=0.0, lambda_max=50.0)
        with pytest.raises(ParameterError, match="wind_speed"):
            generate(spec)

    def test_region_bias_shifts_rates(self):
        spec = SynthSpec(n_regions=2, n_days=40, seed=3, weights={}, bias=0.0,
                         region_bias=[0.0, math.log(3.0)])
        _, truth = generate(spec)
        lam_by_region = truth.groupby("region_code")["lam"].mean()
        assert lam_by_region.iloc[1] == pytest.approx(3.0 * lam_by_region.iloc[0])

    def test_region_bias_length_checked(self):
        with pytest.raises(ParameterError):
            generate(SynthSpec(n_regions=3, region_bias=[0.0]))

    def test_contamination_adds_counts(self):
        base = SynthSpec(n_regions=2, n_days=500, seed=4, weights={}, bias=0.0)
        dirty = SynthSpec(n_regions=2, n_days=500, seed=4, weights={}, bias=0.0,
                          contamination_rate=0.5)
        clean_frame, _ = generate(base)
        dirty_frame, _ = generate(dirty)
        assert dirty_frame["y"].sum() > clean_frame["y"].sum()

    def test_feature_ranges_valid(self):
        frame, _ = generate(SynthSpec(n_regions=2, n_days=400, seed=6))
        assert frame["cloud_cover"].between(0, 1).all()
        assert frame["wind_bearing"].between(0, 360, inclusive="left").all()
        assert (frame["snow_cover"] >= 0).all()
        assert frame["thunderstorm"].isin([0.0, 1.0]).all()
        assert (frame["rainfall"] >= 0).all()


class TestOracle:
    def test_hand_values(self):
        assert oracle_nll([1.0], [1]) == pytest.approx(1.0, abs=1e-12)
        assert oracle_nll([1.0], [0]) == pytest.approx(1.0, abs=1e-12)
        expected = 3.0 + math.log(2.0) - 2.0 * math.log(3.0)
        assert oracle_nll([3.0], [2]) == pytest.approx(expected, abs=1e-12)

    def test_misalignment(self):
        with pytest.raises(ShapeError):
            oracle_nll([1.0, 2.0], [1])

    def test_monte_carlo_stability(self):
        spec = SynthSpec(n_regions=5, n_days=2000, seed=8,
                         weights={"cloud_cover": 0.5}, bias=0.5)
        vals = []
        for seed in (8, 9):
            frame, truth = generate(SynthSpec(**{**spec.__dict__, "seed": seed}))
            vals.append(oracle_nll(truth["lam"], frame["y"]))
        assert abs(vals[0] - vals[1]) / vals[0] < 0.01

    def test_true_rates_beat_perturbed_rates(self):
        frame, truth = generate(SynthSpec(n_regions=4, n_days=1500, seed=10,
                                          weights={"rainfall": 0.3}, bias=0.4))
        lam = truth["lam"].to_numpy()
        y = frame["y"].to_numpy()
        floor = oracle_nll(lam, y)
        n = len(y)
        se = np.std(-_logpmf(lam, y)) / math.sqrt(n)
        for factor in (0.7, 1.4):
            assert oracle_nll(lam * factor, y) >= floor - 3 * se


def _logpmf(lam, y):
    from scipy.stats import poisson
    return poisson.logpmf(y, lam)


class TestCsvEmission:
    def test_three_files_and_ingest_round_trip(self, tmp_path):
        spec = SynthSpec(n_regions=3, n_days=60, seed=12)
        frame, truth = generate(spec)
        paths = write_synth_csvs(frame, truth, tmp_path)
        assert [p.name for p in paths] == ["outage.csv", "weather.csv", "truth.csv"]

        outages = parse_outage_csv(paths[0])
        weather = parse_weather_csv(paths[1])
        rebuilt = aggregate_by_date_region(outages, weather)
        assert len(rebuilt) == len(frame)
        np.testing.assert_array_equal(rebuilt["y"].to_numpy(), frame["y"].to_numpy())
        np.testing.assert_allclose(rebuilt["wind_speed"], frame["wind_speed"], atol=1e-12)
        assert (rebuilt["weather_imputed"] == 0).all()

    def test_byte_determinism(self, tmp_path):
        spec = SynthSpec(n_regions=2, n_days=30, seed=13)
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            frame, truth = generate(spec)
            write_synth_csvs(frame, truth, d)
        for name in ("outage.csv", "weather.csv", "truth.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_outage_rows_only_for_positive_days(self, tmp_path):
        frame, truth = generate(SynthSpec(n_regions=2, n_days=40, seed=14,
                                          weights={}, bias=-1.5))
        paths = write_synth_csvs(frame, truth, tmp_path)
        records = parse_outage_csv(paths[0])
        assert len(records) == int((frame["y"] > 0).sum())
        assert all(r.outage_count > 0 for r in records)


class TestGridCoords:
    def test_layout(self):
        coords = region_grid_coords(5)
        assert [c[0] for c in coords] == [79, 80, 81, 82, 83]
        assert coords[0][1:] == (0.0, 0.0)
        assert coords[4][1:] == (1.0, 1.0)

    def test_jitter_deterministic(self):
        assert region_grid_coords(4, jitter=0.2, seed=3) == \
            region_grid_coords(4, jitter=0.2, seed=3)
