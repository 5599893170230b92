import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfselect import marketdata as md
from conftest import HEADER, SAMPLE_ROWS, make_day, make_series, weekdays


def write(tmp_path, rows, name="bars.csv"):
    p = tmp_path / name
    p.write_text("\n".join([HEADER, *rows]) + "\n")
    return p


def test_two_row_file_loads_as_one_series(tmp_path):
    p = write(tmp_path, SAMPLE_ROWS[:2])
    series = md.load_bars(p, "15min")
    assert list(series) == ["SH600000"]
    assert len(series["SH600000"]) == 2


def test_high_below_low_is_rejected_with_row_number(tmp_path):
    rows = list(SAMPLE_ROWS)
    rows.append("SH600000,2019-01-02,14:45,9.70,9.70,9.50,9.71,100,970,1,0,1,1,1")
    rows[2], rows[3] = rows[3], rows[2]
    p = write(tmp_path, rows)
    with pytest.raises(md.MalformedRow) as exc:
        md.load_bars(p, "15min")
    assert exc.value.row == 3


def test_sample_rows_round_trip_byte_identical(sample_csv, tmp_path):
    series = md.load_bars(sample_csv, "15min")
    out = tmp_path / "out.csv"
    md.write_bars(series, out)
    assert out.read_bytes() == sample_csv.read_bytes()
    s = series["SH600000"]
    assert s.times == ["09:45", "10:00", "15:00"]
    assert s.values[0, md.CLOSE] == 9.72 and s.values[-1, md.CLOSE] == 9.70


def test_non_canonical_input_is_canonicalized(tmp_path):
    rows = [SAMPLE_ROWS[1].replace(",9.6,", ",9.60,").replace("3630000", "3.63e6")]
    p = write(tmp_path, rows)
    out = tmp_path / "out.csv"
    md.write_bars(md.load_bars(p), out)
    assert out.read_text().splitlines()[1] == SAMPLE_ROWS[1]


def test_unsorted_mixed_instruments(tmp_path):
    other = [r.replace("SH600000", "SZ000001") for r in SAMPLE_ROWS]
    rows = [SAMPLE_ROWS[2], other[1], SAMPLE_ROWS[0], other[0], SAMPLE_ROWS[1]]
    series = md.load_bars(write(tmp_path, rows))
    assert sorted(series) == ["SH600000", "SZ000001"]
    assert series["SH600000"].times == ["09:45", "10:00", "15:00"]
    assert series["SZ000001"].times == ["09:45", "10:00"]


@pytest.mark.parametrize("mutate, error", [
    (lambda r: r.replace("09:45", "09:40"), md.FrequencyMismatch),
    (lambda r: r + ",1", md.MalformedRow),
    (lambda r: r.replace("2019-01-02", "2019-13-02"), md.MalformedRow),
    (lambda r: r.replace("2380000", "abc"), md.MalformedRow),
    (lambda r: r.replace(",1327,", ",-1,"), md.MalformedRow),
])
def test_bad_rows(tmp_path, mutate, error):
    p = write(tmp_path, [mutate(SAMPLE_ROWS[0])])
    with pytest.raises(error) as exc:
        md.load_bars(p)
    assert exc.value.row == 1


def test_duplicate_timestamp_is_non_monotonic(tmp_path):
    p = write(tmp_path, [SAMPLE_ROWS[0], SAMPLE_ROWS[1], SAMPLE_ROWS[0]])
    with pytest.raises(md.NonMonotonicTime) as exc:
        md.load_bars(p)
    assert exc.value.row == 3


def test_120min_file_rejects_15min_bucket(tmp_path):
    p = write(tmp_path, [SAMPLE_ROWS[0]])
    with pytest.raises(md.FrequencyMismatch):
        md.load_bars(p, "120min")
    assert len(md.load_bars(write(tmp_path, [SAMPLE_ROWS[2]], "b.csv"), "120min")["SH600000"]) == 1


def test_signed_commission_ratio_accepted(tmp_path):
    p = write(tmp_path, [SAMPLE_ROWS[0].replace(",1.77,", ",-37.5,")])
    assert md.load_bars(p)["SH600000"].values[0, md.CR] == -37.5


def test_check_bars_collects_all_problems(tmp_path):
    rows = [SAMPLE_ROWS[0], "bad,row", SAMPLE_ROWS[1].replace("9.73,9.73", "9.73,9.50")]
    series, diags = md.check_bars(write(tmp_path, rows))
    assert [d.row for d in diags] == [2, 3]
    assert len(series["SH600000"]) == 1


def test_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(md.EmptyInput):
        md.load_bars(p)


def test_bucket_layout():
    assert md.BUCKETS["15min"][0] == "09:45" and md.BUCKETS["15min"][7] == "11:30"
    assert md.BUCKETS["15min"][8] == "13:15" and md.BUCKETS["15min"][-1] == "15:00"
    assert md.BUCKETS["120min"] == ("11:30", "15:00")


def test_series_rejects_non_increasing_time():
    v = np.tile([10, 10, 10, 10, 1, 1, 1, 0, 1, 1, 1.0], (2, 1))
    d = np.array(["2019-01-02"] * 2, dtype="datetime64[D]")
    with pytest.raises(md.NonMonotonicTime):
        md.BarSeries("X", "15min", d, np.array([3, 3]), v)


# resampling -------------------------------------------------------------------

def one_session(values, day="2019-01-02", session=0):
    n = len(values)
    return md.BarSeries("X", "15min", np.full(n, np.datetime64(day, "D")),
                        np.arange(n) + 8 * session, np.asarray(values, float))


def test_resample_constant_session():
    bar = [9.7, 9.7, 9.7, 9.7, 1000, 9700, 10, 0.5, 1.2, 5e7, 6e7]
    out = md.resample(one_session([bar] * 8))
    assert len(out) == 1 and out.times == ["11:30"]
    x = out.values[0]
    assert x[md.VOLUME] == 8000 and x[md.AMOUNT] == 8 * 9700 and x[md.NOT] == 80
    for c in (md.OPEN, md.CLOSE, md.HIGH, md.LOW, md.CP, md.CS):
        assert x[c] == bar[c]
    assert x[md.CR] == pytest.approx(0.5) and x[md.VR] == pytest.approx(1.2)


def test_resample_high_is_max():
    rng = np.random.default_rng(0)
    _, _, v = make_day(rng, dt.date(2019, 1, 2))
    v[0, md.HIGH], v[1, md.HIGH] = 9.79, 9.73
    v[2:8, md.HIGH] = np.maximum(v[2:8, md.OPEN], v[2:8, md.CLOSE])
    v[0:2, md.OPEN] = v[0:2, md.CLOSE] = 9.7
    v[2:8, [md.OPEN, md.CLOSE, md.HIGH]] = 9.7
    out = md.resample(one_session(v[:8]))
    assert out.values[0, md.HIGH] == 9.79


def fold_oracle(bars):
    """Aggregate bar-by-bar with the bucket rules, written as a plain loop."""
    acc = None
    vol_w = {md.CR: 0.0, md.VR: 0.0}
    for b in bars:
        if acc is None:
            acc = list(b)
            acc[md.VOLUME] = acc[md.AMOUNT] = acc[md.NOT] = 0.0
        acc[md.CLOSE] = b[md.CLOSE]
        acc[md.HIGH] = max(acc[md.HIGH], b[md.HIGH])
        acc[md.LOW] = min(acc[md.LOW], b[md.LOW])
        acc[md.VOLUME] += b[md.VOLUME]
        acc[md.AMOUNT] += b[md.AMOUNT]
        acc[md.NOT] += b[md.NOT]
        for c in vol_w:
            vol_w[c] += b[c] * b[md.VOLUME]
        acc[md.CP], acc[md.CS] = b[md.CP], b[md.CS]
    for c in vol_w:
        acc[c] = vol_w[c] / acc[md.VOLUME]
    return acc


@pytest.mark.parametrize("seed", range(10))
def test_resample_matches_fold_oracle(seed):
    rng = np.random.default_rng(seed)
    days = weekdays(dt.date(2019, 1, 2), 2)
    s = make_series(rng, days)
    out = md.resample(s)
    assert len(out) == 4
    for g in range(4):
        np.testing.assert_allclose(out.values[g], fold_oracle(s.values[8 * g:8 * g + 8]), rtol=1e-12)


def test_resample_zero_volume_uses_plain_mean():
    bar = [9.7, 9.7, 9.7, 9.7, 0, 0, 0, 0.5, 1.2, 5e7, 6e7]
    rows = [list(bar) for _ in range(8)]
    rows[3][md.CR] = 2.5
    out = md.resample(one_session(rows))
    assert out.values[0, md.CR] == pytest.approx((7 * 0.5 + 2.5) / 8)


def test_resample_incomplete_session(rng):
    s = make_series(rng, weekdays(dt.date(2019, 1, 2), 2), drop=[(1, 12)])
    with pytest.raises(md.IncompleteSession):
        md.resample(s)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_resample_preserves_daily_volume(seed, n_days):
    rng = np.random.default_rng(seed)
    s = make_series(rng, weekdays(dt.date(2019, 1, 2), n_days))
    out = md.resample(s)
    v15 = s.values[:, md.VOLUME].reshape(n_days, 16).sum(axis=1)
    v120 = out.values[:, md.VOLUME].reshape(n_days, 2).sum(axis=1)
    assert np.array_equal(v15, v120)


# calendar alignment -------------------------------------------------------------

def test_align_full_day_unchanged(rng):
    days = weekdays(dt.date(2019, 1, 2), 1)
    s = make_series(rng, days)
    out = md.align_to_calendar(s, md.TradingCalendar(tuple(days)))
    assert np.array_equal(out.values, s.values) and np.array_equal(out.dates, s.dates)


def test_align_drops_day_missing_1315(rng):
    days = weekdays(dt.date(2019, 1, 2), 3)
    s = make_series(rng, days, drop=[(1, md.BUCKETS["15min"].index("13:15"))])
    out = md.align_to_calendar(s, md.TradingCalendar(tuple(days)))
    kept = out.trading_days().astype(dt.date).tolist()
    assert kept == [days[0], days[2]]


def test_align_five_days_two_broken_matches_count_oracle(rng):
    days = weekdays(dt.date(2019, 1, 2), 5)
    s = make_series(rng, days, drop=[(1, 0), (1, 5), (3, 15)])
    out = md.align_to_calendar(s, md.TradingCalendar(tuple(days)))
    counts = {}
    for d in s.dates.astype(dt.date).tolist():
        counts[d] = counts.get(d, 0) + 1
    expected = [d for d in days if counts.get(d) == 16]
    assert out.trading_days().astype(dt.date).tolist() == expected
    assert len(expected) == 3 and len(out) == 48


def test_align_drops_days_outside_calendar(rng):
    days = weekdays(dt.date(2019, 1, 2), 3)
    s = make_series(rng, days)
    out = md.align_to_calendar(s, md.TradingCalendar((days[0], days[2])))
    assert out.trading_days().astype(dt.date).tolist() == [days[0], days[2]]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.tuples(st.integers(0, 3), st.integers(0, 15)), max_size=6))
def test_align_is_idempotent(seed, drops):
    rng = np.random.default_rng(seed)
    days = weekdays(dt.date(2019, 1, 2), 4)
    s = make_series(rng, days, drop=sorted(set(drops)))
    cal = md.TradingCalendar(tuple(days))
    once = md.align_to_calendar(s, cal)
    twice = md.align_to_calendar(once, cal)
    assert np.array_equal(once.values, twice.values) and np.array_equal(once.dates, twice.dates)


def test_calendar_and_universe_invariants():
    with pytest.raises(ValueError):
        md.TradingCalendar((dt.date(2019, 1, 3), dt.date(2019, 1, 2)))
    with pytest.raises(ValueError):
        md.Universe.from_ids([])
    with pytest.raises(ValueError):
        md.Universe.from_ids(["SH600000", "SH600000"])
    u = md.Universe.from_ids(["SZ000001", "SH600000"])
    assert list(u) == ["SH600000", "SZ000001"] and "SH600000" in u


def test_bar_iteration_round_trip(rng):
    s = make_series(rng, weekdays(dt.date(2019, 1, 2), 2))
    again = md.BarSeries.from_bars(s.instrument_id, s.frequency, list(s))
    assert np.array_equal(again.values, s.values) and np.array_equal(again.buckets, s.buckets)
