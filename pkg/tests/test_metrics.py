import math

import numpy as np
import pytest

from gridcast.errors import ParameterError, UndefinedMetricError
from gridcast.metrics import (mae, mape, mdape, r2, report_per_region,
                              reports_to_plot_rows, rmse, score_region, smape)
from gridcast.numerics import make_rng


# plain-loop re-implementations: the independent oracle for every metric
def brute_mae(x, xh):
    return sum(abs(b - a) for a, b in zip(x, xh)) / len(x)


def brute_mape(x, xh):
    terms = [abs(a - b) / a for a, b in zip(x, xh) if a != 0]
    return 100.0 * sum(terms) / len(terms)


def brute_smape(x, xh):
    total = sum(abs((a - b) / (a + b)) for a, b in zip(x, xh) if a + b != 0)
    return 100.0 * 2.0 * total / len(x)


def brute_mdape(x, xh):
    terms = sorted(abs(a - b) / a for a, b in zip(x, xh) if a != 0)
    n = len(terms)
    mid = terms[n // 2] if n % 2 else (terms[n // 2 - 1] + terms[n // 2]) / 2
    return 100.0 * mid


def brute_rmse(x, xh):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(x, xh)) / len(x))


def brute_r2(x, xh):
    mean = sum(x) / len(x)
    ss_tot = sum((a - mean) ** 2 for a in x)
    ss_res = sum((a - b) ** 2 for a, b in zip(x, xh))
    return 1.0 - ss_res / ss_tot


class TestExamples:
    def test_mae(self):
        assert mae([1, 2, 3], [1, 2, 3]) == 0.0
        assert mae([1, 2, 3], [1, 3, 5]) == pytest.approx(1.0)
        assert mae([1], [4]) == 3.0

    def test_mape(self):
        assert mape([1, 2, 3], [1, 2, 3]) == 0.0
        assert mape([1, 2, 4], [2, 1, 3]) == pytest.approx(100 * (1 + 0.5 + 0.25) / 3)
        assert mape([0, 2], [1, 2]) == 0.0  # zero-actual point excluded

    def test_mape_all_zero(self):
        with pytest.raises(UndefinedMetricError):
            mape([0, 0], [1, 2])

    def test_smape(self):
        assert smape([2, 3], [2, 3]) == 0.0
        assert smape([2], [0]) == pytest.approx(200.0)
        assert smape([3], [1]) == pytest.approx(100.0)
        assert smape([0], [0]) == 0.0  # zero-sum term contributes nothing

    def test_mdape(self):
        x = [10.0, 10.0, 10.0]
        xh = [11.0, 15.0, 12.0]  # APEs 10%, 50%, 20%
        assert mdape(x, xh) == pytest.approx(20.0)
        assert mdape([1, 2], [1, 2]) == 0.0
        assert mdape([10, 10], [11, 13]) == pytest.approx(20.0)  # even: mean of 10, 30

    def test_rmse(self):
        assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
        assert rmse([1, 2, 3], [1, 3, 5]) == pytest.approx(math.sqrt(5 / 3))
        assert rmse([1], [4]) == 3.0

    def test_r2(self):
        x = np.array([1.0, 2.0, 3.0])
        assert r2(x, x) == pytest.approx(1.0)
        assert r2(x, np.full(3, x.mean())) == pytest.approx(0.0)
        assert r2(x, [1, 3, 5]) == pytest.approx(-1.5)

    def test_r2_zero_variance(self):
        with pytest.raises(UndefinedMetricError):
            r2([2, 2, 2], [1, 2, 3])

    def test_empty_inputs(self):
        with pytest.raises(ParameterError):
            mae([], [])
        with pytest.raises(ParameterError):
            rmse([1], [1, 2])


class TestAgainstBruteForce:
    def test_random_pairs(self):
        rng = make_rng(17)
        pairs = [(mae, brute_mae), (mape, brute_mape), (smape, brute_smape),
                 (mdape, brute_mdape), (rmse, brute_rmse), (r2, brute_r2)]
        for _ in range(30):
            n = int(rng.integers(2, 40))
            x = rng.poisson(3.0, size=n).astype(float)
            xh = np.abs(rng.normal(3.0, 2.0, size=n))
            if np.all(x == x[0]):
                continue
            for fast, brute in pairs:
                if fast in (mape, mdape) and not np.any(x != 0):
                    continue
                assert fast(x, xh) == pytest.approx(brute(list(x), list(xh)), abs=1e-12)


class TestProperties:
    def test_rmse_dominates_mae(self):
        rng = make_rng(4)
        for _ in range(50):
            x = rng.normal(size=20)
            xh = rng.normal(size=20)
            assert rmse(x, xh) >= mae(x, xh) - 1e-15

    def test_smape_symmetry(self):
        rng = make_rng(8)
        for _ in range(50):
            x = np.abs(rng.normal(size=15))
            xh = np.abs(rng.normal(size=15))
            assert smape(x, xh) == smape(xh, x)

    def test_permutation_invariance(self):
        rng = make_rng(12)
        x = rng.poisson(4.0, size=25).astype(float) + 1
        xh = np.abs(rng.normal(4, 1, size=25))
        perm = rng.permutation(25)
        for metric in (mae, mape, smape, mdape, rmse, r2):
            assert metric(x, xh) == pytest.approx(metric(x[perm], xh[perm]), abs=1e-12)

    def test_scale_invariance_of_percentage_metrics(self):
        rng = make_rng(13)
        x = rng.poisson(5.0, size=20).astype(float) + 1
        xh = np.abs(rng.normal(5, 1, size=20))
        for metric in (mape, mdape):
            assert metric(x, xh) == pytest.approx(metric(3.7 * x, 3.7 * xh), rel=1e-12)


class TestReports:
    def test_single_region_aggregate_std_zero(self):
        reports = report_per_region([(79, [1.0, 2.0, 4.0], [1.5, 2.5, 3.0])])
        std_row = reports[-1]
        assert std_row.region_code == "ALL_STD"
        assert std_row.rmse == pytest.approx(0.0)

    def test_two_region_mean_and_std(self):
        # rmse 2 for region a, 4 for region b
        reports = report_per_region([
            ("a", [0.0, 1.0], [2.0, 3.0]),
            ("b", [0.0, 1.0], [4.0, 5.0]),
        ])
        mean_row, std_row = reports[-2], reports[-1]
        assert mean_row.rmse == pytest.approx(3.0)
        assert std_row.rmse == pytest.approx(1.0)

    def test_all_zero_actual_region_partial_report(self):
        rep = score_region(112, [0, 0, 0], [1.0, 0.5, 0.2])
        assert rep.mape_pct is None
        assert rep.mdape_pct is None
        assert rep.rmse is not None
        assert rep.n_excluded_zero_actual == 3
        assert "mape" in rep.notes

    def test_report_invariant_rmse_ge_mae(self):
        rep = score_region(1, [1.0, 5.0, 2.0], [2.0, 3.0, 2.5])
        assert rep.rmse >= rep.mae >= 0
        assert 0 <= rep.smape_pct <= 200

    def test_plot_rows_skip_nulls(self):
        reports = report_per_region([(7, [0, 0], [1.0, 2.0])])
        rows = reports_to_plot_rows(reports)
        assert all(metric != "mape_pct" for _, metric, _ in rows)
        assert any(metric == "rmse" for _, metric, _ in rows)

    def test_empty_error(self):
        with pytest.raises(ParameterError):
            report_per_region([])
