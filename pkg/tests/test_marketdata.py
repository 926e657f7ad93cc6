import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from epfkit.errors import (DegenerateScaleError, GapError, HistoryError, ParseError,
                           ValidationError)
from epfkit.marketdata import (CalendarFrame, MarketDataset, VstParams, apply_vst,
                               asinh_transform, fit_vst, invert_vst, load_dataset,
                               save_dataset)
from epfkit.synth import SynthSpec, synth_generate


def _rows(start, hours, price=lambda i: 40.0 + i, offset="+01:00"):
    t0 = dt.datetime.fromisoformat(start)
    out = []
    for i in range(hours):
        t = t0 + dt.timedelta(hours=i)
        out.append((t.isoformat() + offset, price(i), 20000.0 + i, 5000.0))
    return out


def _write(path, rows, header="timestamp,price_da,load_fc,res_fc"):
    lines = [header] + [",".join(str(x) for x in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def _panel(days=40, seed=0):
    rng = np.random.default_rng(seed)
    start = dt.date(2021, 3, 1)
    return MarketDataset(
        days=[start + dt.timedelta(days=i) for i in range(days)],
        prices_da=50 + 20 * rng.standard_t(3, size=(days, 24)),
        exog1=20000 + 1000 * rng.random((days, 24)),
        exog2=5000 + 1000 * rng.random((days, 24)),
    )


# ----------------------------------------------------------------- loading

def test_two_full_days(tmp_path):
    ds = load_dataset(_write(tmp_path / "a.csv", _rows("2021-01-04T00:00:00", 48)))
    assert ds.n_days == 2
    assert ds.prices_da.shape == (2, 24)
    assert ds.prices_da[1, 0] == 64.0
    assert ds.prices_id is None
    assert ds.meta["repairs"] == {"duplicated_hours_averaged": 0, "missing_hours_interpolated": 0}


def test_duplicated_clock_change_hour_is_averaged(tmp_path):
    # autumn change: 02:00 local occurs twice, at +02:00 and +01:00
    rows = _rows("2021-10-30T00:00:00", 24, offset="+02:00")
    day = []
    for h in range(24):
        day.append((f"2021-10-31T{h:02d}:00:00+0{2 if h < 3 else 1}:00", 30.0, 1.0, 1.0))
    day.insert(3, ("2021-10-31T02:00:00+01:00", 60.0, 1.0, 1.0))
    day[2] = ("2021-10-31T02:00:00+02:00", 40.0, 1.0, 1.0)
    ds = load_dataset(_write(tmp_path / "b.csv", rows + day))
    assert ds.n_days == 2
    assert ds.prices_da[1, 2] == 50.0
    assert ds.meta["repairs"]["duplicated_hours_averaged"] == 1


def test_missing_hour_is_interpolated(tmp_path):
    rows = _rows("2021-03-01T00:00:00", 48, price=lambda i: 30.0 if i == 1 else 50.0)
    del rows[2]  # hour 3 of day 1, between 30 and 50
    ds = load_dataset(_write(tmp_path / "c.csv", rows))
    assert ds.prices_da[0, 2] == 40.0
    assert ds.meta["repairs"]["missing_hours_interpolated"] == 1


def test_two_missing_hours_raise_gap(tmp_path):
    rows = _rows("2021-03-01T00:00:00", 48)
    del rows[5:7]
    with pytest.raises(GapError):
        load_dataset(_write(tmp_path / "d.csv", rows))


def test_missing_edge_hour_raises_gap(tmp_path):
    rows = _rows("2021-03-01T00:00:00", 48)[1:]
    with pytest.raises(GapError):
        load_dataset(_write(tmp_path / "e.csv", rows))


def test_malformed_timestamp_names_row(tmp_path):
    rows = _rows("2021-03-01T00:00:00", 48)
    rows[9] = ("not-a-time",) + rows[9][1:]
    with pytest.raises(ParseError) as err:
        load_dataset(_write(tmp_path / "f.csv", rows))
    assert err.value.row == 11
    assert "row 11" in str(err.value)


def test_non_numeric_price_names_row(tmp_path):
    rows = _rows("2021-03-01T00:00:00", 48)
    rows[0] = rows[0][:1] + ("abc",) + rows[0][2:]
    with pytest.raises(ParseError) as err:
        load_dataset(_write(tmp_path / "g.csv", rows))
    assert err.value.row == 2


def test_negative_exogenous_rejected(tmp_path):
    rows = _rows("2021-03-01T00:00:00", 48)
    rows[4] = rows[4][:2] + (-1.0,) + rows[4][3:]
    with pytest.raises(ValidationError):
        load_dataset(_write(tmp_path / "h.csv", rows))


def test_negative_prices_allowed(tmp_path):
    ds = load_dataset(_write(tmp_path / "i.csv",
                             _rows("2021-03-01T00:00:00", 48, price=lambda i: -5.0)))
    assert np.all(ds.prices_da == -5.0)


def test_missing_column(tmp_path):
    with pytest.raises(ParseError):
        load_dataset(_write(tmp_path / "j.csv", [(1, 2)], header="timestamp,price_da"))


def test_custom_schema(tmp_path):
    path = _write(tmp_path / "k.csv", _rows("2021-03-01T00:00:00", 24),
                  header="time,da,load,wind")
    ds = load_dataset(path, {"timestamp": "time", "price_da": "da", "load_fc": "load",
                             "res_fc": "wind"})
    assert ds.n_days == 1


def test_round_trip_and_determinism(tmp_path):
    ds = synth_generate(SynthSpec(days=60, seed=3))
    save_dataset(ds, tmp_path / "s.csv")
    a = load_dataset(tmp_path / "s.csv")
    b = load_dataset(tmp_path / "s.csv")
    assert np.array_equal(a.prices_da, b.prices_da)
    assert np.array_equal(a.prices_bal, b.prices_bal)
    np.testing.assert_allclose(a.prices_da, ds.prices_da, rtol=1e-9)
    assert a.days == ds.days


# ------------------------------------------------------------ panel object

def test_panel_is_immutable():
    ds = _panel()
    with pytest.raises(ValueError):
        ds.prices_da[0, 0] = 1.0


def test_shape_and_continuity_validated():
    ds = _panel(10)
    with pytest.raises(ValidationError):
        MarketDataset(ds.days, ds.prices_da[:, :23], ds.exog1, ds.exog2)
    days = list(ds.days)
    days[5] = days[5] + dt.timedelta(days=1)
    with pytest.raises(ValidationError):
        MarketDataset(days, ds.prices_da, ds.exog1, ds.exog2)
    bad = ds.prices_da.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValidationError):
        MarketDataset(ds.days, bad, ds.exog1, ds.exog2)


def test_index_of_and_subset():
    ds = _panel(10)
    assert ds.index_of(ds.days[3]) == 3
    assert ds.index_of(ds.days[3].isoformat()) == 3
    sub = ds.subset(2, 5)
    assert sub.days == ds.days[2:5]
    assert np.array_equal(sub.prices_da, ds.prices_da[2:5])
    with pytest.raises(HistoryError):
        ds.index_of(dt.date(1999, 1, 1))


@given(st.integers(0, 3000), st.integers(1, 60))
def test_calendar_dummies_one_hot(offset, n):
    days = [dt.date(2015, 1, 1) + dt.timedelta(days=offset + i) for i in range(n)]
    cal = CalendarFrame.from_days(days)
    assert np.all(cal.dummies.sum(axis=1) == 1)
    assert np.all(cal.dummies[np.arange(n), cal.weekday - 1] == 1)
    assert np.all((cal.weekday >= 1) & (cal.weekday <= 7))


def test_calendar_monday_is_one():
    cal = CalendarFrame.from_days([dt.date(2024, 1, 1)])  # a Monday
    assert cal.weekday[0] == 1


# --------------------------------------------------------------------- VST

def test_constant_panel_is_degenerate():
    ds = _panel()
    flat = ds.with_prices(np.full_like(ds.prices_da, 42.0))
    with pytest.raises(DegenerateScaleError):
        asinh_transform(flat)


def test_vst_needs_thirty_days():
    with pytest.raises(HistoryError):
        asinh_transform(_panel(29))


def test_vst_parameters_are_median_and_scaled_mad():
    ds = _panel()
    out, params = asinh_transform(ds)
    p = ds.prices_da.ravel()
    med = np.median(p)
    assert params.center == med
    assert params.scale == pytest.approx(1.482602218505602 * np.median(np.abs(p - med)), rel=1e-12)
    np.testing.assert_allclose(out.prices_da, np.arcsinh((ds.prices_da - med) / params.scale))
    np.testing.assert_allclose(out.exog1.mean(), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.exog1.std(), 1.0, rtol=1e-10)


def test_center_maps_to_zero():
    ds = _panel()
    params = fit_vst(ds)
    z = apply_vst(ds.with_prices(np.full_like(ds.prices_da, params.center)), params)
    assert np.all(z.prices_da == 0.0)


def test_invert_examples():
    assert invert_vst(np.array([0.0]), VstParams(50.0, 10.0))[0] == 50.0
    assert invert_vst(np.array([np.arcsinh(1.0)]), VstParams(0.0, 1.0))[0] == pytest.approx(1.0)
    with pytest.raises(DegenerateScaleError):
        VstParams(0.0, 0.0)


def test_heavy_tailed_round_trip():
    ds = _panel(60, seed=11)
    shifted = ds.with_prices(ds.prices_da + 300.0)
    out, params = asinh_transform(shifted)
    back = invert_vst(out.prices_da, params)
    np.testing.assert_allclose(back, shifted.prices_da, rtol=1e-10)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 24), elements=st.floats(-500, 500)),
       st.floats(-100, 100), st.floats(0.1, 100))
def test_round_trip_property(values, center, scale):
    params = VstParams(center, scale)
    z = np.arcsinh((values - center) / scale)
    np.testing.assert_allclose(invert_vst(z, params), values, rtol=1e-10, atol=1e-10 * scale)


def test_vst_transforms_all_price_panels():
    ds = synth_generate(SynthSpec(days=60, seed=1))
    out, params = asinh_transform(ds)
    np.testing.assert_allclose(invert_vst(out.prices_id, params), ds.prices_id, rtol=1e-10)
    np.testing.assert_allclose(invert_vst(out.prices_bal, params), ds.prices_bal, rtol=1e-10)
