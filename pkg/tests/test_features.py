import math
import statistics

import numpy as np
import pytest

from qgeo_regime.errors import DataFormatError, InputError, InsufficientHistoryError
from qgeo_regime.features import (
    OHLCV_COLUMNS,
    FeatureMatrix,
    PricePanel,
    build_features,
    causal_cutoff_index,
    enrich,
    fit_preprocessor,
    load_ohlcv,
    raw_features,
    rolling_corr,
    rolling_stat,
    transform,
)
from qgeo_regime.synthetic import business_days


def write_csv(path, dates, closes, bad_cell=None):
    lines = [",".join(OHLCV_COLUMNS)]
    for i, (d, c) in enumerate(zip(dates, closes)):
        v = "" if c is None else f"{c}"
        cells = [str(d), v, v, v, v, v, "1000"]
        if bad_cell is not None and i == bad_cell:
            cells[4] = "12.x"
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def make_panel(prices_a, prices_b, start="2001-01-02"):
    dates = business_days(start, len(prices_a))
    fields = {}
    for name, px in (("SPY", prices_a), ("DIA", prices_b)):
        px = np.asarray(px, dtype=float)
        fields[name] = np.column_stack([px, px, px, px, px, np.full(len(px), 1e6)])
    return PricePanel(["SPY", "DIA"], dates, fields)


def random_prices(T, seed):
    r = np.random.default_rng(seed)
    rets = r.standard_normal((T, 2)) * 0.01
    rets[:, 1] = 0.6 * rets[:, 0] + 0.8 * rets[:, 1]
    return 100 * np.exp(np.cumsum(rets, axis=0))


class TestLoad:
    def test_aligned_files(self, tmp_path):
        d = business_days("2020-01-01", 10)
        a = write_csv(tmp_path / "SPY.csv", d, np.arange(10) + 100.0)
        b = write_csv(tmp_path / "DIA.csv", d, np.arange(10) + 200.0)
        panel = load_ohlcv({"SPY": a, "DIA": b}, min_dates=5)
        assert len(panel) == 10 and panel.assets == ["SPY", "DIA"]
        np.testing.assert_array_equal(panel.adj_close("DIA"), np.arange(10) + 200.0)

    def test_list_of_paths_uses_stems(self, tmp_path):
        d = business_days("2020-01-01", 10)
        paths = [write_csv(tmp_path / f"{n}.csv", d, np.ones(10)) for n in ("X", "Y")]
        assert load_ohlcv(paths, min_dates=5).assets == ["X", "Y"]

    def test_intersection_calendar(self, tmp_path):
        d = business_days("2020-01-01", 10)
        a = write_csv(tmp_path / "SPY.csv", d, np.ones(10))
        b = write_csv(tmp_path / "DIA.csv", np.delete(d, 4), np.ones(9))
        panel = load_ohlcv({"SPY": a, "DIA": b}, min_dates=5)
        assert len(panel) == 9 and d[4] not in panel.dates

    def test_missing_close_dropped_everywhere(self, tmp_path):
        d = business_days("2020-01-01", 10)
        closes = [1.0] * 10
        closes[3] = None
        a = write_csv(tmp_path / "SPY.csv", d, closes)
        b = write_csv(tmp_path / "DIA.csv", d, [2.0] * 10)
        panel = load_ohlcv({"SPY": a, "DIA": b}, min_dates=5)
        assert len(panel) == 9 and d[3] not in panel.dates

    def test_malformed_cell_names_file_and_line(self, tmp_path):
        d = business_days("2020-01-01", 10)
        a = write_csv(tmp_path / "SPY.csv", d, np.ones(10), bad_cell=2)
        b = write_csv(tmp_path / "DIA.csv", d, np.ones(10))
        with pytest.raises(DataFormatError, match=r"SPY\.csv:4"):
            load_ohlcv({"SPY": a, "DIA": b}, min_dates=5)

    def test_bad_header_and_missing_file(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("date,close\n2020-01-01,1\n")
        with pytest.raises(DataFormatError, match="header"):
            load_ohlcv({"a": p, "b": p}, min_dates=1)
        with pytest.raises(DataFormatError, match="nope.csv"):
            load_ohlcv({"a": tmp_path / "nope.csv", "b": p}, min_dates=1)

    def test_insufficient_history(self, tmp_path):
        d = business_days("2020-01-01", 10)
        a = write_csv(tmp_path / "SPY.csv", d, np.ones(10))
        b = write_csv(tmp_path / "DIA.csv", d, np.ones(10))
        with pytest.raises(InsufficientHistoryError, match="300"):
            load_ohlcv({"SPY": a, "DIA": b})

    def test_round_trip(self, tmp_path):
        panel = make_panel(random_prices(30, 1)[:, 0], random_prices(30, 1)[:, 1])
        paths = panel.to_csv(tmp_path)
        back = load_ohlcv(paths, min_dates=30)
        np.testing.assert_array_equal(back.dates, panel.dates)
        np.testing.assert_array_equal(back.fields["SPY"], panel.fields["SPY"])

    def test_panel_invariants(self):
        with pytest.raises(InputError):
            PricePanel(["A"], business_days("2020-01-01", 3), {"A": np.ones((3, 6))})
        d = business_days("2020-01-01", 3)[::-1]
        with pytest.raises(InputError):
            PricePanel(["A", "B"], d, {"A": np.ones((3, 6)), "B": np.ones((3, 6))})


class TestRolling:
    def test_constant(self):
        x = np.full(30, 3.5)
        assert np.all(rolling_stat(x, 20, "mean")[19:] == 3.5)
        assert np.all(rolling_stat(x, 20, "std")[19:] == 0.0)
        assert np.all(rolling_stat(x, 20, "min")[19:] == 3.5)
        assert np.all(rolling_stat(x, 20, "max")[19:] == 3.5)
        assert np.all(np.isnan(rolling_stat(x, 20, "mean")[:19]))

    def test_ramp_max(self):
        x = np.arange(1.0, 41.0)
        np.testing.assert_array_equal(rolling_stat(x, 20, "max")[19:], x[19:])

    def test_sliding_window_oracle(self, rng):
        x = rng.standard_normal(60)
        for stat, fn in (("mean", statistics.fmean), ("std", statistics.stdev), ("min", min), ("max", max)):
            got = rolling_stat(x, 20, stat)
            for t in range(19, 60):
                assert got[t] == pytest.approx(fn(list(x[t - 19 : t + 1])), abs=1e-12)

    def test_corr_oracle(self, rng):
        x, y = rng.standard_normal((2, 40))
        got = rolling_corr(x, y, 20)
        for t in range(19, 40):
            assert got[t] == pytest.approx(statistics.correlation(list(x[t - 19 : t + 1]), list(y[t - 19 : t + 1])), abs=1e-12)

    def test_corr_flat_window(self):
        assert np.all(rolling_corr(np.ones(25), np.arange(25.0), 20)[19:] == 0.0)

    def test_unknown_stat(self):
        with pytest.raises(InputError):
            rolling_stat(np.ones(5), 2, "median")


class TestRawFeatures:
    def test_columns(self):
        fm = raw_features(make_panel(random_prices(40, 2)[:, 0], random_prices(40, 2)[:, 1]))
        assert fm.columns == [
            "SPY_logret", "SPY_vol5", "SPY_vol20", "SPY_mom5", "SPY_mom20",
            "DIA_logret", "DIA_vol5", "DIA_vol20", "DIA_mom5", "DIA_mom20",
            "corr20", "disp5", "disp20",
        ]
        assert fm.shape == (40, 13) and fm.valid_from == 20
        assert np.all(np.isfinite(fm.values[20:]))

    def test_constant_prices(self):
        fm = raw_features(make_panel(np.full(30, 50.0), np.full(30, 80.0)))
        np.testing.assert_array_equal(fm.values[20:], 0.0)

    def test_doubling(self):
        px = np.full(25, 10.0)
        px[22:] = 20.0
        fm = raw_features(make_panel(px, np.full(25, 5.0)))
        assert fm.values[22, 0] == pytest.approx(math.log(2), abs=1e-15)
        assert fm.values[22, 0] == pytest.approx(0.6931, abs=1e-4)

    def test_spreadsheet_oracle(self):
        P = random_prices(45, 3)
        fm = raw_features(make_panel(P[:, 0], P[:, 1]))
        for t in range(20, 45):
            row = []
            rets = []
            for j in range(2):
                px = P[:, j]
                r = [math.log(px[i] / px[i - 1]) for i in range(1, t + 1)]
                rets.append(r)
                row += [
                    r[-1],
                    statistics.stdev(r[-5:]),
                    statistics.stdev(r[-20:]),
                    px[t] / px[t - 5] - 1,
                    px[t] / px[t - 20] - 1,
                ]
            d = [abs(a - b) for a, b in zip(*rets)]
            row += [statistics.correlation(rets[0][-20:], rets[1][-20:]), statistics.fmean(d[-5:]), statistics.fmean(d[-20:])]
            np.testing.assert_allclose(fm.values[t], row, rtol=0, atol=1e-12)

    def test_too_short(self):
        with pytest.raises(InsufficientHistoryError):
            raw_features(make_panel(np.ones(20), np.ones(20)))


class TestEnrich:
    def test_shape_and_names(self):
        P = random_prices(60, 4)
        fm = build_features(make_panel(P[:, 0], P[:, 1]))
        assert fm.shape == (60, 52) and fm.valid_from == 39
        assert fm.columns[:4] == ["SPY_logret_mean", "SPY_logret_std", "SPY_logret_min", "SPY_logret_max"]
        assert np.all(np.isfinite(fm.values[39:]))
        assert np.any(np.isnan(fm.values[38]))

    def test_matches_window_oracle(self):
        P = random_prices(60, 5)
        raw = raw_features(make_panel(P[:, 0], P[:, 1]))
        fm = enrich(raw)
        for j in range(13):
            for t in range(39, 60):
                win = list(raw.values[t - 19 : t + 1, j])
                ref = [statistics.fmean(win), statistics.stdev(win), min(win), max(win)]
                np.testing.assert_allclose(fm.values[t, 4 * j : 4 * j + 4], ref, atol=1e-12)

    def test_csv_round_trip(self, tmp_path):
        P = random_prices(50, 6)
        fm = build_features(make_panel(P[:, 0], P[:, 1]))
        fm.to_csv(tmp_path / "f.csv")
        back = FeatureMatrix.from_csv(tmp_path / "f.csv")
        assert back.columns == fm.columns and back.valid_from == fm.valid_from
        np.testing.assert_array_equal(back.values[39:], fm.values[39:])
        header = (tmp_path / "f.csv").read_text().splitlines()[0]
        assert header.startswith("date,SPY_logret_mean,")


def factor_features(T, seed, F=12):
    r = np.random.default_rng(seed)
    f = r.standard_normal((T, 2))
    load = r.standard_normal((2, F))
    X = f @ load + 0.05 * r.standard_normal((T, F))
    return FeatureMatrix(X, [f"c{i}" for i in range(F)], business_days("2001-01-02", T), 0)


class TestPreprocessor:
    def test_standardization(self):
        fm = factor_features(200, 1)
        prep = fit_preprocessor(fm, 149, 3)
        Z = (fm.values[:150] - prep.mean) / prep.std
        np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-10)
        np.testing.assert_allclose(Z.std(axis=0, ddof=1), 1, atol=1e-10)

    def test_planted_two_factor(self):
        prep = fit_preprocessor(factor_features(300, 2), 299, 3)
        assert prep.eigenvalues[1] / prep.eigenvalues[2] > 10

    def test_loadings_orthonormal_and_signed(self):
        prep = fit_preprocessor(factor_features(200, 3), 199, 5)
        np.testing.assert_allclose(prep.loadings @ prep.loadings.T, np.eye(5), atol=1e-10)
        assert np.all(np.diff(prep.eigenvalues) <= 0) and np.all(prep.eigenvalues >= 0)
        piv = prep.loadings[np.arange(5), np.argmax(np.abs(prep.loadings), axis=1)]
        assert np.all(piv > 0)

    def test_deterministic(self):
        fm = factor_features(200, 4)
        a, b = fit_preprocessor(fm, 150, 4), fit_preprocessor(fm, 150, 4)
        for f in ("mean", "std", "loadings", "eigenvalues"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_causal(self):
        fm = factor_features(200, 5)
        a = fit_preprocessor(fm, 120, 4)
        fm.values[121:] = 1e6
        b = fit_preprocessor(fm, 120, 4)
        for f in ("mean", "std", "loadings", "eigenvalues"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_needs_history(self):
        with pytest.raises(InsufficientHistoryError):
            fit_preprocessor(factor_features(200, 6), 30, 5)

    def test_rank_deficient_names_p(self):
        fm = factor_features(100, 7, F=4)
        fm.values[:, 2] = fm.values[:, 0]
        fm.values[:, 3] = fm.values[:, 1]
        with pytest.raises(InputError, match="p=2"):
            fit_preprocessor(fm, 99, 3)

    def test_transform(self):
        fm = factor_features(200, 8)
        prep = fit_preprocessor(fm, 149, 4)
        Y, zero = transform(prep, fm, return_flags=True)
        np.testing.assert_allclose(np.linalg.norm(Y, axis=1), 1.0, atol=1e-12)
        assert not zero.any()
        oracle = ((fm.values - prep.mean) / prep.std) @ prep.loadings.T
        oracle /= np.linalg.norm(oracle, axis=1, keepdims=True)
        np.testing.assert_allclose(Y, oracle, atol=1e-14)

    def test_transform_mean_row_flagged(self):
        fm = factor_features(200, 9)
        prep = fit_preprocessor(fm, 149, 4)
        Y, zero = transform(prep, prep.mean[None, :], return_flags=True)
        assert zero[0] and np.all(Y == 0)

    def test_transform_rowwise(self):
        fm = factor_features(200, 10)
        prep = fit_preprocessor(fm, 149, 4)
        full = transform(prep, fm)
        np.testing.assert_array_equal(transform(prep, fm.values[50:60]), full[50:60])

    def test_transform_column_mismatch(self):
        prep = fit_preprocessor(factor_features(200, 11), 149, 4)
        with pytest.raises(InputError):
            transform(prep, np.ones((3, 5)))


def test_causal_cutoff_calendar_days():
    dates = business_days("2008-08-01", 60)
    idx = causal_cutoff_index(dates, "2008-09-15")
    assert dates[idx] <= np.datetime64("2008-09-05") < dates[idx + 1]
    assert causal_cutoff_index(dates, "2008-08-05") == -1
