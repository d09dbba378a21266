import json

import numpy as np
import pytest

from qgeo_regime.crises import CrisisWindow, crisis_mask, crisis_ranges, load_crises, save_crises
from qgeo_regime.errors import DataFormatError, InputError
from qgeo_regime.synthetic import business_days


def test_bundled_table():
    assert len(load_crises(since=None)) == 18
    since = load_crises()
    assert len(since) == 17
    assert all(c.start >= np.datetime64("2000-01-01") for c in since)
    assert {c.category for c in since} == {"Conventional", "Novel"}
    assert [c.start for c in since] == sorted(c.start for c in since)


def test_window_validation():
    with pytest.raises(InputError):
        CrisisWindow("x", "2020-03-01", "2020-02-01")
    with pytest.raises(InputError):
        CrisisWindow("x", "2020-01-01", "2020-02-01", "Other")


def test_indices_extension_and_clipping():
    dates = business_days("2020-01-01", 100)
    c = CrisisWindow("x", dates[20], dates[29])
    assert c.indices(dates) == (10, 39)
    assert c.indices(dates, extension=0) == (20, 29)
    edge = CrisisWindow("e", dates[3], dates[98])
    assert edge.indices(dates) == (0, 99)
    gone = CrisisWindow("g", "2030-01-01", "2030-02-01")
    assert gone.indices(dates) is None


def test_weekend_bounds_snap_inward():
    dates = business_days("2020-01-06", 30)  # a Monday
    c = CrisisWindow("w", "2020-01-11", "2020-01-19")  # Saturday to Sunday
    assert c.indices(dates, 0) == (5, 9)


def test_mask_and_ranges():
    dates = business_days("2020-01-01", 200)
    cs = [CrisisWindow("a", dates[50], dates[60]), CrisisWindow("b", dates[100], dates[110])]
    assert crisis_ranges(dates, cs) == [(40, 70), (90, 120)]
    mask = crisis_mask(dates, cs)
    assert mask.sum() == 62 and mask[40] and not mask[71]


def test_round_trip(tmp_path):
    cs = load_crises()
    save_crises(cs, tmp_path / "c.json")
    assert load_crises(tmp_path / "c.json") == cs


def test_bare_list_and_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps([{"name": "x", "start": "2010-01-01", "end": "2010-02-01"}]))
    (c,) = load_crises(p)
    assert c.category == "Conventional"
    p.write_text(json.dumps({"crises": []}))
    with pytest.raises(InputError, match="no crisis windows"):
        load_crises(p)
    p.write_text("{")
    with pytest.raises(DataFormatError):
        load_crises(p)
    p.write_text(json.dumps([{"start": "2010-01-01"}]))
    with pytest.raises(DataFormatError):
        load_crises(p)
    with pytest.raises(InputError, match="not found"):
        load_crises(tmp_path / "missing.json")
