import json
import math

import numpy as np
import pytest

from qgeo_regime import evaluation
from qgeo_regime.baselines import BaselineConfig
from qgeo_regime.crises import crisis_mask
from qgeo_regime.errors import InputError
from qgeo_regime.evaluation import HPO_GRID, select_config, walk_forward, walk_forward_scores
from qgeo_regime.features import PricePanel
from qgeo_regime.observables import DEFAULT_CONFIGS
from qgeo_regime.pipeline import PanelData
from qgeo_regime.scoring import ScoreSeries

DET = BaselineConfig("rolling_vol_z")


@pytest.fixture
def fake_scores(monkeypatch):
    """Replace the scorer with a hand-written z series."""
    holder = {}

    def fake(data, cfg, cutoff, stop=None):
        z = holder["z"][: len(data) if stop is None else stop]
        return ScoreSeries("fake", z, z, z, 1, 2)

    monkeypatch.setattr(evaluation, "score_detector", fake)
    return holder


def crisis_rows(data, crisis):
    return int(np.searchsorted(data.dates, crisis.start)), int(np.searchsorted(data.dates, crisis.end))


class TestDetectionLogic:
    def test_perfect_step(self, small_data, small_planted, fake_scores):
        z = np.zeros(len(small_data))
        for c in small_planted.crises:
            s, e = crisis_rows(small_data, c)
            z[s : e + 1] = 5.0
        fake_scores["z"] = z
        rep = walk_forward(small_data, [DET], small_planted.crises, "fixed", start_year=2001, end_year=2003)
        hits = [r for r in rep.results if r.crisis is not None]
        assert len(hits) == 3
        assert all(r.detected and r.delay == 0 and r.far == 0.0 for r in hits)
        assert all(r.far == 0.0 and r.far_days == 0.0 for r in rep.results)
        assert all(r.oos_d > 0 for r in hits)

    def test_delay_counts_from_start(self, small_data, small_planted, fake_scores):
        c = small_planted.crises[0]
        s, _ = crisis_rows(small_data, c)
        for offset, delay in ((0, 0), (4, 4), (-3, 0)):
            z = np.zeros(len(small_data))
            z[s + offset] = 5.0
            fake_scores["z"] = z
            rep = walk_forward(small_data, [DET], [c], "fixed", start_year=2001, end_year=2001)
            (r,) = [r for r in rep.results if r.crisis == c.name]
            assert r.detected and r.delay == delay

    def test_never_crossed(self, small_data, small_planted, fake_scores):
        fake_scores["z"] = np.zeros(len(small_data))
        rep = walk_forward(small_data, [DET], small_planted.crises, "fixed", start_year=2001, end_year=2003)
        hits = [r for r in rep.results if r.crisis is not None]
        assert all(r.detected is False and r.delay is None for r in hits)

    def test_false_alarm_rate(self, small_data, small_planted, fake_scores):
        z = np.zeros(len(small_data))
        lo, hi = evaluation._year_bounds(small_data.dates, 2001)
        normal = np.nonzero(~crisis_mask(small_data.dates, small_planted.crises)[lo:hi])[0] + lo
        z[normal[[5, 6, 50, 120]]] = 5.0  # 5 and 6 merge into one event; 50 and 120 are separate
        fake_scores["z"] = z
        rep = walk_forward(small_data, [DET], small_planted.crises, "fixed", start_year=2001, end_year=2001)
        r = rep.results[0]
        assert r.far == pytest.approx(3 / (len(normal) / 252))
        assert r.far_days == pytest.approx(4 / (len(normal) / 252))

    def test_unknown_strategy(self, small_data, small_planted):
        with pytest.raises(InputError):
            walk_forward(small_data, [DET], small_planted.crises, "oracle")


class TestStrategies:
    @pytest.mark.parametrize("strategy", ["fixed", "far", "adaptive"])
    def test_runs_on_planted(self, small_data, small_planted, strategy):
        rep = walk_forward(small_data, [DET], small_planted.crises, strategy, start_year=2002, end_year=2003)
        assert {r.strategy for r in rep.results} == {strategy}
        for r in rep.results:
            assert r.far >= 0 and r.far_days >= 0
            assert r.delay is None or r.delay >= 0
            if strategy == "far":
                assert r.tau is not None
        s = rep.summary()[f"rolling_vol_z/{strategy}"]
        assert s["crises"] == 2

    def test_report_json(self, small_data, small_planted, tmp_path):
        rep = walk_forward(small_data, [DET], small_planted.crises, "fixed", start_year=2002, end_year=2002)
        rep.to_json(tmp_path / "wf.json")
        doc = json.loads((tmp_path / "wf.json").read_text())
        assert set(doc) == {"results", "summary"}
        assert doc["results"][0]["config"]["method"] == "rolling_vol_z"

    def test_channel_insufficient_history_flagged(self, small_data, small_planted):
        cfg = DEFAULT_CONFIGS["spectral_entropy"].with_(n=4, p=6)
        rep = walk_forward(small_data, [cfg], small_planted.crises, "fixed", start_year=2000, end_year=2000)
        assert all(any(f.startswith("skipped") for f in r.flags) for r in rep.results)
        assert all(math.isnan(r.far) for r in rep.results)


class TestHpo:
    def test_fallback_without_past_crises(self, small_data, small_planted):
        base = DEFAULT_CONFIGS["ham_sensitivity"]
        lo = int(np.searchsorted(small_data.dates, small_planted.crises[0].end))
        cfg, flags = select_config(small_data, base, small_planted.crises, lo)
        assert cfg == base and flags == ["hpo_fallback_no_past_crises"]

    def test_grid_choice_is_deterministic(self, small_data, small_planted):
        grid = {"n": (4,), "p": (6, 10), "method": ("random", "pca_inspired"), "w": (10, 20)}
        base = DEFAULT_CONFIGS["ham_sensitivity"]
        lo = evaluation._year_bounds(small_data.dates, 2003)[0]
        a = select_config(small_data, base, small_planted.crises, lo, grid)
        b = select_config(small_data, base, small_planted.crises, lo, grid)
        assert a == b and a[1] == []
        assert a[0].n == 4 and a[0].p in (6, 10) and a[0].w in (10, 20)

    def test_grid_skips_infeasible(self):
        cfgs = list(evaluation._grid_configs(DEFAULT_CONFIGS["berry_rate"], HPO_GRID))
        assert not any(c.method == "pca_inspired" and c.p > c.n * c.n - 1 for c in cfgs)
        assert len(cfgs) == len(set(cfgs))


def mutate_after(panel: PricePanel, t: int, seed: int) -> PanelData:
    rng = np.random.default_rng(seed)
    fields = {a: v.copy() for a, v in panel.fields.items()}
    for v in fields.values():
        v[t:, :5] *= np.exp(rng.normal(0, 0.2, (len(v) - t, 1)))
        v[t:, 5] = rng.integers(1, 10**6, len(v) - t)
    return PanelData.from_panel(PricePanel(panel.assets, panel.dates, fields))


@pytest.mark.parametrize("refit", ["monthly", "yearly"])
def test_walk_forward_scores_ignore_future(small_data, small_planted, refit):
    cfg = DEFAULT_CONFIGS["berry_rate"].with_(n=4, p=6)
    lo, hi = evaluation._year_bounds(small_data.dates, 2002)
    base = walk_forward_scores(small_data, cfg, lo, hi, refit)
    assert np.isfinite(base).all()
    for seed, t in enumerate((lo + 3, lo + 100, hi - 20)):
        moved = walk_forward_scores(mutate_after(small_planted.panel, t, seed), cfg, lo, hi, refit)
        assert np.array_equal(base[: t - lo], moved[: t - lo])


def test_monthly_refits_use_past_rows_only(small_data, monkeypatch):
    cfg = DEFAULT_CONFIGS["spectral_entropy"].with_(n=4, p=6)
    lo, hi = evaluation._year_bounds(small_data.dates, 2002)
    seen = []
    real = evaluation.score_detector

    def spy(data, c, cutoff, stop=None):
        seen.append((cutoff, stop))
        return real(data, c, cutoff, stop)

    monkeypatch.setattr(evaluation, "score_detector", spy)
    walk_forward_scores(small_data, cfg, lo, hi)
    months = np.asarray(small_data.dates[lo:hi], dtype="datetime64[M]")
    assert len(seen) == len(np.unique(months)) == 12
    for cutoff, stop in seen:
        first = cutoff + 1
        assert first == lo or months[first - lo] != months[first - lo - 1]
        assert stop > first


def test_calibration_failure_is_flagged(small_data, small_planted):
    # cusum's burn-in leaves fewer than 252 scored days before 2001; later years still run
    rep = walk_forward(small_data, [BaselineConfig("cusum")], small_planted.crises, "far", start_year=2001, end_year=2002)
    by_year = {r.year: r for r in rep.results}
    assert by_year[2001].flags[-1].startswith("skipped") and math.isnan(by_year[2001].far)
    assert by_year[2002].far >= 0
