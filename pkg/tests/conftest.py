import datetime as dt

import numpy as np
import pytest

from hfselect import marketdata as md

HEADER = ",".join(md.HEADER)

# Three rows of SH600000 on 2019-01-02 (09:45, 10:00, 15:00), canonical form.
SAMPLE_ROWS = [
    "SH600000,2019-01-02,09:45,9.72,9.74,9.79,9.72,2380000,23200000,1327,1.77,1.43,145000000,59300000",
    "SH600000,2019-01-02,10:00,9.61,9.73,9.73,9.6,3630000,35100000,1716,2.3,1.81,116000000,48500000",
    "SH600000,2019-01-02,15:00,9.7,9.7,9.71,9.68,2210000,21400000,728,0.21,0.89,86100000,154000000",
]


def make_day(rng, day, frequency="15min", price=10.0):
    """Random valid bars for one complete day, as (dates, buckets, values)."""
    n = md.BARS_PER_DAY[frequency]
    closes = price * np.exp(np.cumsum(rng.normal(0, 0.003, n)))
    opens = np.concatenate([[price], closes[:-1]])
    v = np.empty((n, md.N_FEATURES))
    v[:, md.OPEN] = np.round(opens, 4)
    v[:, md.CLOSE] = np.round(closes, 4)
    v[:, md.HIGH] = np.maximum(v[:, md.OPEN], v[:, md.CLOSE]) + np.round(rng.uniform(0, 0.02, n), 4)
    v[:, md.LOW] = np.minimum(v[:, md.OPEN], v[:, md.CLOSE]) - np.round(rng.uniform(0, 0.02, n), 4)
    v[:, md.VOLUME] = rng.integers(1, 1000, n) * 100
    v[:, md.AMOUNT] = v[:, md.VOLUME] * v[:, md.CLOSE]
    v[:, md.NOT] = rng.integers(1, 500, n)
    v[:, md.CR] = rng.uniform(-100, 100, n)
    v[:, md.VR] = rng.uniform(0.5, 2.5, n)
    v[:, md.CP] = rng.uniform(1e7, 1e9, n)
    v[:, md.CS] = rng.uniform(1e7, 1e9, n)
    return np.full(n, np.datetime64(day, "D")), np.arange(n), v


def make_series(rng, days, inst="SH600000", frequency="15min", drop=()):
    """Series over ``days``; ``drop`` lists (day index, bucket index) pairs to remove."""
    parts = [make_day(rng, d, frequency, 10.0 + i * 0.01) for i, d in enumerate(days)]
    dates = np.concatenate([p[0] for p in parts])
    buckets = np.concatenate([p[1] for p in parts])
    values = np.concatenate([p[2] for p in parts])
    keep = np.ones(len(dates), bool)
    n = md.BARS_PER_DAY[frequency]
    for di, b in drop:
        keep[di * n + b] = False
    return md.BarSeries(inst, frequency, dates[keep], buckets[keep], values[keep])


def weekdays(start, n):
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sample_csv(tmp_path):
    p = tmp_path / "sample.csv"
    p.write_text("\n".join([HEADER, *SAMPLE_ROWS]) + "\n")
    return p


# acceptance summary ---------------------------------------------------------------

_ACCEPTANCE: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "ok": True, "ran": False})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["ok"] = False


@pytest.fixture
def acceptance_note(request):
    """Attach a measured value to the criterion's summary line."""
    number = request.node.get_closest_marker("acceptance").args[0]

    def note(text):
        _NOTES.setdefault(number, []).append(text)
    return note


_NOTES: dict[int, list[str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        status = "PASS" if e["ok"] and e["ran"] else ("FAIL" if not e["ok"] else "SKIP")
        notes = "; ".join(_NOTES.get(number, []))
        terminalreporter.write_line(f"[{status}] criterion {number}: {e['title']}"
                                    + (f" ({notes})" if notes else ""))
