import json

import numpy as np
import pandas as pd
import pytest

from gridcast.cli import (PipelineConfig, cmd_evaluate, cmd_forecast,
                          cmd_moran, cmd_synth, cmd_train, main, workdir_lock)
from gridcast.errors import ParameterError, StageError
from gridcast.synth import region_grid_coords

FAST = dict(q_low=0.0, q_high=1.0, n_in=3, n_out=2,
            hidden1=6, hidden2=4, dense_size=4, epochs=2, batch_size=32,
            pca_threshold=0.999, denoise_window=3, n_permutations=99,
            validation_fraction=0.25, test_fraction=0.2)


def fast_config(wd, seed=5, n_regions=6, n_days=90, **kw):
    return PipelineConfig(workdir=str(wd), seed=seed,
                          synth={"n_regions": n_regions, "n_days": n_days},
                          **{**FAST, **kw})


def write_coords(wd, n_regions, jitter=0.0, seed=0):
    coords = region_grid_coords(n_regions, jitter=jitter, seed=seed)
    pd.DataFrame(coords, columns=["region_code", "x", "y"]).to_csv(
        wd / "coords.csv", index=False)


@pytest.fixture(scope="module")
def trained_workdir(tmp_path_factory):
    wd = tmp_path_factory.mktemp("pipeline")
    cfg = fast_config(wd)
    cmd_synth(cfg)
    write_coords(wd, 6)
    cmd_train(cfg)
    return wd, cfg


class TestSynthCommand:
    def test_writes_three_files(self, tmp_path):
        cfg = fast_config(tmp_path, n_regions=2, n_days=20)
        paths = cmd_synth(cfg)
        assert sorted(p.name for p in paths) == ["outage.csv", "truth.csv", "weather.csv"]
        assert (tmp_path / "effective_config.json").exists()

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for wd in (a, b):
            cmd_synth(fast_config(wd, n_regions=2, n_days=25))
        for name in ("outage.csv", "weather.csv", "truth.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_lambda_breach_exits_nonzero(self, tmp_path):
        rc = main(["synth", "--workdir", str(tmp_path), "--config",
                   _write_config(tmp_path, synth={"n_regions": 1, "n_days": 10,
                                                  "weights": {"wind_speed": 3.0},
                                                  "lambda_max": 10.0})])
        assert rc != 0


def _write_config(tmp_path, **kw):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(kw))
    return str(path)


class TestMoranCommand:
    def test_json_report(self, tmp_path, capsys):
        cfg = fast_config(tmp_path, n_regions=9, n_days=40)
        cmd_synth(cfg)
        write_coords(tmp_path, 9)
        result = cmd_moran(cfg)
        doc = json.loads((tmp_path / "moran.json").read_text())
        assert doc["i"] == result.i
        assert doc["n_permutations"] == 99
        assert 0 < doc["p_permutation"] <= 1

    def test_constant_totals_fail_with_stage(self, tmp_path):
        wd = tmp_path
        wd.mkdir(exist_ok=True)
        write_coords(wd, 4)
        out = wd / "outage.csv"
        rows = ["date,region_code,outage_count,cause"]
        for code in range(79, 83):
            rows.append(f"2021-01-01,{code},3,weather")
        out.write_text("\n".join(rows) + "\n")
        cfg = PipelineConfig(workdir=str(wd), n_permutations=99)
        with pytest.raises(StageError, match="moran-test"):
            cmd_moran(cfg)

    def test_missing_coords_file(self, tmp_path):
        cfg = fast_config(tmp_path, n_regions=2, n_days=10)
        cmd_synth(cfg)
        with pytest.raises(StageError, match="moran-coords"):
            cmd_moran(cfg)


class TestTrainCommand:
    def test_outputs_exist(self, trained_workdir):
        wd, _ = trained_workdir
        for name in ("checkpoint.bin", "history.csv", "scaler.json", "pca.json",
                     "metrics.json", "effective_config.json"):
            assert (wd / name).exists(), name
        history = pd.read_csv(wd / "history.csv")
        assert list(history.columns) == ["epoch", "train_loss", "val_loss"]
        assert len(history) >= 1

    def test_missing_weather_names_stage(self, tmp_path):
        cfg = fast_config(tmp_path, n_regions=2, n_days=30)
        cmd_synth(cfg)
        (tmp_path / "weather.csv").unlink()
        with pytest.raises(StageError, match="ingest"):
            cmd_train(cfg)

    def test_lock_blocks_concurrent_runs(self, tmp_path):
        cfg = fast_config(tmp_path, n_regions=2, n_days=30)
        cmd_synth(cfg)
        with workdir_lock(cfg.resolve_workdir()):
            with pytest.raises(StageError, match="lock"):
                cmd_train(cfg)

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for wd in (a, b):
            cfg = fast_config(wd, n_regions=4, n_days=60)
            cmd_synth(cfg)
            cmd_train(cfg)
            cmd_forecast(cfg)
        for name in ("history.csv", "checkpoint.bin", "forecast.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestForecastCommand:
    def test_rows_per_region_match_horizon(self, trained_workdir):
        wd, cfg = trained_workdir
        report = cmd_forecast(cfg)
        counts = report.groupby("region_code").size()
        assert (counts == cfg.n_out).all()
        assert (report["count"] >= 0).all()
        assert report["count"].dtype.kind == "i"

    def test_insufficient_history_is_window_error(self, trained_workdir):
        wd, cfg = trained_workdir
        with pytest.raises(StageError, match="forecast"):
            cmd_forecast(cfg, as_of="2019-01-01")

    def test_comparison_file_when_actuals_exist(self, trained_workdir, tmp_path):
        wd, cfg = trained_workdir
        cmd_forecast(cfg, as_of="2020-02-15")
        comp = pd.read_csv(wd / "forecast_vs_actual.csv")
        assert {"region_code", "horizon_date", "rate", "count", "actual"} <= set(comp.columns)
        assert len(comp) > 0


class TestEvaluateCommand:
    def test_perfect_forecast_scores_zero_error(self, tmp_path):
        wd = tmp_path
        actuals = ["date,region_code,outage_count,cause"]
        forecast_rows = []
        for day, y in zip(("2021-01-01", "2021-01-02", "2021-01-03"), (2, 5, 3)):
            actuals.append(f"{day},79,{y},weather")
            forecast_rows.append({"region_code": 79, "horizon_date": day,
                                  "rate": float(y), "count": y})
        (wd / "outage.csv").write_text("\n".join(actuals) + "\n")
        pd.DataFrame(forecast_rows).to_csv(wd / "forecast.csv", index=False)
        cfg = PipelineConfig(workdir=str(wd))
        reports = cmd_evaluate(cfg)
        region_report = reports[0]
        assert region_report.mae == 0.0
        assert region_report.rmse == 0.0
        assert region_report.r2 == pytest.approx(1.0)

    def test_key_mismatch_lists_offenders(self, tmp_path):
        wd = tmp_path
        (wd / "outage.csv").write_text(
            "date,region_code,outage_count,cause\n2021-01-01,79,2,weather\n")
        pd.DataFrame([{"region_code": 80, "horizon_date": "2021-01-01",
                       "rate": 1.0, "count": 1}]).to_csv(wd / "forecast.csv", index=False)
        cfg = PipelineConfig(workdir=str(wd))
        with pytest.raises(StageError, match="region 80"):
            cmd_evaluate(cfg)

    def test_zero_actual_region_gets_null_mape(self, tmp_path):
        wd = tmp_path
        (wd / "outage.csv").write_text(
            "date,region_code,outage_count,cause\n"
            "2021-01-01,79,0,weather\n2021-01-02,79,1,weather\n")
        pd.DataFrame([
            {"region_code": 79, "horizon_date": "2021-01-01", "rate": 0.5, "count": 0},
        ]).to_csv(wd / "forecast.csv", index=False)
        cfg = PipelineConfig(workdir=str(wd))
        reports = cmd_evaluate(cfg)
        assert reports[0].mape_pct is None
        assert reports[0].rmse is not None
        assert "mape" in reports[0].notes

    def test_plot_csv_emitted(self, tmp_path):
        wd = tmp_path
        (wd / "outage.csv").write_text(
            "date,region_code,outage_count,cause\n"
            "2021-01-01,79,2,weather\n2021-01-02,79,4,weather\n")
        pd.DataFrame([
            {"region_code": 79, "horizon_date": "2021-01-01", "rate": 2.5, "count": 2},
            {"region_code": 79, "horizon_date": "2021-01-02", "rate": 3.5, "count": 4},
        ]).to_csv(wd / "forecast.csv", index=False)
        cmd_evaluate(PipelineConfig(workdir=str(wd)))
        plot = pd.read_csv(wd / "metrics_plot.csv")
        assert list(plot.columns) == ["region", "metric", "value"]
        assert (plot["region"].astype(str) == "79").any()


class TestConfigAndMain:
    def test_unknown_config_key_rejected(self, tmp_path):
        path = _write_config(tmp_path, bogus_knob=1)
        with pytest.raises(ParameterError, match="bogus_knob"):
            PipelineConfig.load(path)

    def test_config_round_trip_reproduces_outputs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cfg = fast_config(a, n_regions=3, n_days=50)
        cmd_synth(cfg)
        cmd_train(cfg)
        effective = json.loads((a / "effective_config.json").read_text())
        effective["workdir"] = str(b)
        (tmp_path / "rerun.json").write_text(json.dumps(effective))
        cfg2 = PipelineConfig.load(tmp_path / "rerun.json")
        cmd_synth(cfg2)
        cmd_train(cfg2)
        assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()
        assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()

    def test_main_synth_and_flags(self, tmp_path):
        cfg_path = _write_config(tmp_path, synth={"n_regions": 2, "n_days": 15})
        rc = main(["synth", "--config", cfg_path, "--workdir", str(tmp_path),
                   "--seed", "3"])
        assert rc == 0
        effective = json.loads((tmp_path / "effective_config.json").read_text())
        assert effective["seed"] == 3

    def test_main_train_horizon_override(self, tmp_path):
        cfg = fast_config(tmp_path, n_regions=3, n_days=60)
        cmd_synth(cfg)
        cfg_path = tmp_path / "cfg.json"
        cfg.dump(cfg_path)
        rc = main(["train", "--config", str(cfg_path), "--horizon", "1",
                   "--epochs", "1"])
        assert rc == 0
        fc_rc = main(["forecast", "--config", str(cfg_path)])
        assert fc_rc == 0
        report = pd.read_csv(tmp_path / "forecast.csv")
        assert report.groupby("region_code").size().eq(1).all()

    def test_main_error_paths_exit_nonzero(self, tmp_path):
        rc = main(["train", "--workdir", str(tmp_path)])
        assert rc != 0

    def test_env_var_workdir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GRIDCAST_WORKDIR", str(tmp_path))
        cfg = PipelineConfig()
        assert cfg.resolve_workdir() == tmp_path
