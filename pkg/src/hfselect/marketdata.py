"""Bar loading, validation, resampling and calendar alignment.

A bar file is a CSV with the header::

    instrument,date,time,close,open,high,low,volume,amount,not,cr,vr,cp,cs

``time`` is the bucket end time (``09:45`` is the first 15-minute bucket of
the morning session).  Rows may mix instruments and need not be sorted.
Internally a :class:`BarSeries` keeps its bars as a ``(n, 11)`` float array
whose columns follow :data:`FEATURES`.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

FEATURES = ("close", "open", "high", "low", "volume", "amount",
            "not", "cr", "vr", "cp", "cs")
N_FEATURES = len(FEATURES)
HEADER = ("instrument", "date", "time") + FEATURES

CLOSE, OPEN, HIGH, LOW, VOLUME, AMOUNT, NOT, CR, VR, CP, CS = range(N_FEATURES)
PRICE_COLS = (CLOSE, OPEN, HIGH, LOW)
PRICE_DECIMALS = 4

SESSIONS = (("09:30", "11:30"), ("13:00", "15:00"))


def _bucket_ends(minutes: int) -> tuple[str, ...]:
    out = []
    for start, end in SESSIONS:
        t = dt.datetime.strptime(start, "%H:%M")
        stop = dt.datetime.strptime(end, "%H:%M")
        while t < stop:
            t += dt.timedelta(minutes=minutes)
            out.append(t.strftime("%H:%M"))
    return tuple(out)


BUCKETS = {"15min": _bucket_ends(15), "120min": _bucket_ends(120)}
BARS_PER_DAY = {k: len(v) for k, v in BUCKETS.items()}


class MarketDataError(Exception):
    """Base class for bar-data problems."""


class EmptyInput(MarketDataError):
    pass


class MalformedRow(MarketDataError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class NonMonotonicTime(MarketDataError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row


class FrequencyMismatch(MarketDataError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row


class IncompleteSession(MarketDataError):
    pass


@dataclass(frozen=True)
class Bar:
    date: dt.date
    time: str
    close: float
    open: float
    high: float
    low: float
    volume: float
    amount: float
    num_transactions: float
    commission_ratio: float
    volume_ratio: float
    commission_purchase: float
    commission_sale: float

    @classmethod
    def from_features(cls, date: dt.date, time: str, x: Iterable[float]) -> "Bar":
        return cls(date, time, *(float(v) for v in x))

    def features(self) -> tuple[float, ...]:
        return (self.close, self.open, self.high, self.low, self.volume,
                self.amount, self.num_transactions, self.commission_ratio,
                self.volume_ratio, self.commission_purchase,
                self.commission_sale)


def bar_problem(x) -> str | None:
    """Return a description of the first violated bar invariant, if any."""
    close, open_, high, low, volume, amount, n_tx = x[:7]
    if not all(np.isfinite(x)):
        return "non-finite value"
    if low > min(open_, close):
        return f"low {low} above min(open, close)"
    if high < max(open_, close):
        return f"high {high} below max(open, close)"
    if high < low:
        return f"high {high} below low {low}"
    if volume < 0 or amount < 0 or n_tx < 0:
        return "negative volume, amount or transaction count"
    return None


@dataclass(frozen=True, eq=False)
class BarSeries:
    """Time-ordered bars of one instrument at one frequency."""

    instrument_id: str
    frequency: str
    dates: np.ndarray           # datetime64[D], one per bar
    buckets: np.ndarray         # int, index into BUCKETS[frequency]
    values: np.ndarray          # (n, 11) float64

    def __post_init__(self):
        if self.frequency not in BUCKETS:
            raise ValueError(f"unknown frequency {self.frequency!r}")
        n = len(self.dates)
        if self.values.shape != (n, N_FEATURES) or len(self.buckets) != n:
            raise ValueError("dates, buckets and values disagree in length")
        if n > 1:
            key = self._keys()
            if np.any(np.diff(key) <= 0):
                raise NonMonotonicTime(int(np.argmax(np.diff(key) <= 0)) + 2,
                                       f"{self.instrument_id}: timestamps not strictly increasing")
        for a in (self.dates, self.buckets, self.values):
            a.flags.writeable = False

    def _keys(self) -> np.ndarray:
        per_day = BARS_PER_DAY[self.frequency]
        return self.dates.astype(np.int64) * per_day + self.buckets

    @classmethod
    def from_bars(cls, instrument_id: str, frequency: str, bars: Iterable[Bar]) -> "BarSeries":
        bars = list(bars)
        index = {t: i for i, t in enumerate(BUCKETS[frequency])}
        return cls(
            instrument_id, frequency,
            np.array([b.date for b in bars], dtype="datetime64[D]"),
            np.array([index[b.time] for b in bars], dtype=np.int64),
            np.array([b.features() for b in bars], dtype=np.float64).reshape(-1, N_FEATURES),
        )

    def __len__(self) -> int:
        return len(self.dates)

    def __iter__(self) -> Iterator[Bar]:
        times = BUCKETS[self.frequency]
        for d, b, x in zip(self.dates, self.buckets, self.values):
            yield Bar.from_features(d.astype(dt.date), times[b], x)

    @property
    def times(self) -> list[str]:
        times = BUCKETS[self.frequency]
        return [times[b] for b in self.buckets]

    def trading_days(self) -> np.ndarray:
        return np.unique(self.dates)

    def select(self, mask: np.ndarray) -> "BarSeries":
        return BarSeries(self.instrument_id, self.frequency, self.dates[mask],
                         self.buckets[mask], self.values[mask])

    def complete_days(self) -> np.ndarray:
        """Dates that carry every bucket of the frequency."""
        days, counts = np.unique(self.dates, return_counts=True)
        return days[counts == BARS_PER_DAY[self.frequency]]

    def day_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Complete days as ``(days, array of shape (n_days, bars_per_day, 11))``."""
        per_day = BARS_PER_DAY[self.frequency]
        aligned = self.select(np.isin(self.dates, self.complete_days()))
        days = aligned.dates[::per_day]
        return days, aligned.values.reshape(len(days), per_day, N_FEATURES)


@dataclass(frozen=True)
class TradingCalendar:
    dates: tuple[dt.date, ...]
    sessions: tuple[tuple[str, str], ...] = SESSIONS

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("calendar dates must be strictly increasing")

    @classmethod
    def from_series(cls, series: dict[str, BarSeries]) -> "TradingCalendar":
        days = set()
        for s in series.values():
            days.update(s.trading_days().astype(dt.date).tolist())
        return cls(tuple(sorted(days)))

    def as_array(self) -> np.ndarray:
        return np.array(self.dates, dtype="datetime64[D]")

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class Universe:
    instruments: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.instruments:
            raise ValueError("universe must not be empty")

    @classmethod
    def from_ids(cls, ids: Iterable[str]) -> "Universe":
        ids = [i.strip() for i in ids if i.strip()]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate instrument in universe")
        return cls(frozenset(ids))

    @classmethod
    def load(cls, path: str | Path) -> "Universe":
        return cls.from_ids(Path(path).read_text().splitlines())

    def __contains__(self, item: str) -> bool:
        return item in self.instruments

    def __iter__(self):
        return iter(sorted(self.instruments))


@dataclass
class Diagnostic:
    row: int
    kind: str
    message: str

    def __str__(self) -> str:
        return f"row {self.row}: {self.kind}: {self.message}"


def _parse_row(row: list[str], lineno: int, frequency: str):
    if len(row) != len(HEADER):
        raise MalformedRow(lineno, f"expected {len(HEADER)} fields, got {len(row)}")
    inst, date, time = (c.strip() for c in row[:3])
    if not inst:
        raise MalformedRow(lineno, "empty instrument")
    try:
        day = dt.date.fromisoformat(date)
    except ValueError:
        raise MalformedRow(lineno, f"bad date {date!r}") from None
    try:
        x = np.array([float(v) for v in row[3:]])
    except ValueError as exc:
        raise MalformedRow(lineno, str(exc)) from None
    problem = bar_problem(x)
    if problem:
        raise MalformedRow(lineno, problem)
    if time not in BUCKETS[frequency]:
        raise FrequencyMismatch(lineno, f"time {time!r} is not a {frequency} bucket end")
    x[list(PRICE_COLS)] = np.round(x[list(PRICE_COLS)], PRICE_DECIMALS)
    return inst, day, BUCKETS[frequency].index(time), x


def check_bars(path: str | Path, frequency: str = "15min"):
    """Parse a bar file without raising.

    Returns ``(series_map, diagnostics)``; rejected rows are listed in the
    diagnostics and left out of the map.  Row numbers count data rows from 1
    (the header is not a row).
    """
    if frequency not in BUCKETS:
        raise ValueError(f"unknown frequency {frequency!r}")
    path = Path(path)
    diagnostics: list[Diagnostic] = []
    rows: dict[str, list] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInput(f"{path}: empty file")
        if tuple(h.strip() for h in header) != HEADER:
            diagnostics.append(Diagnostic(0, "MalformedRow", f"bad header {header}"))
            return {}, diagnostics
        seen: dict[tuple, int] = {}
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                inst, day, bucket, x = _parse_row(row, lineno, frequency)
            except MarketDataError as exc:
                diagnostics.append(Diagnostic(lineno, type(exc).__name__, str(exc)))
                continue
            key = (inst, day, bucket)
            if key in seen:
                diagnostics.append(Diagnostic(
                    lineno, "NonMonotonicTime",
                    f"row {lineno}: duplicate timestamp {inst} {day} {row[2]} (first at row {seen[key]})"))
                continue
            seen[key] = lineno
            rows.setdefault(inst, []).append((day, bucket, x))
    if not rows and not diagnostics:
        raise EmptyInput(f"{path}: no data rows")
    out = {}
    for inst in sorted(rows):
        recs = sorted(rows[inst], key=lambda r: (r[0], r[1]))
        out[inst] = BarSeries(
            inst, frequency,
            np.array([r[0] for r in recs], dtype="datetime64[D]"),
            np.array([r[1] for r in recs], dtype=np.int64),
            np.array([r[2] for r in recs]).reshape(-1, N_FEATURES),
        )
    return out, diagnostics


_ERRORS = {"MalformedRow": MalformedRow, "NonMonotonicTime": NonMonotonicTime,
           "FrequencyMismatch": FrequencyMismatch}


def load_bars(path: str | Path, frequency: str = "15min") -> dict[str, BarSeries]:
    """Load a bar file into ``{instrument_id: BarSeries}``.

    Raises the error for the first rejected row, if any.
    """
    series, diagnostics = check_bars(path, frequency)
    if diagnostics:
        d = diagnostics[0]
        exc = _ERRORS.get(d.kind, MalformedRow)
        raise exc(d.row, d.message.split(": ", 1)[-1])
    return series


def format_number(x: float) -> str:
    """Shortest text that parses back to ``x``; integral values without a dot."""
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_bars(series: dict[str, BarSeries] | Iterable[BarSeries], path: str | Path) -> None:
    """Write series in canonical form: sorted by instrument, date, time."""
    if isinstance(series, dict):
        series = series.values()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for s in sorted(series, key=lambda s: s.instrument_id):
            times = BUCKETS[s.frequency]
            for d, b, x in zip(s.dates, s.buckets, s.values):
                w.writerow([s.instrument_id, str(d), times[b], *map(format_number, x)])


def resample(series: BarSeries, target: str = "120min") -> BarSeries:
    """Aggregate 15-minute bars into 120-minute session bars.

    Prices follow OHLC rules, counts are summed, the two ratio features take
    a volume-weighted mean and the two order-book snapshot features keep the
    last value of the bucket.
    """
    if series.frequency != "15min" or target != "120min":
        raise ValueError("only 15min -> 120min resampling is supported")
    group = 8
    session = series.buckets // group
    key = series.dates.astype(np.int64) * 2 + session
    uniq, start, counts = np.unique(key, return_index=True, return_counts=True)
    if np.any(counts != group):
        bad = uniq[counts != group][0]
        day = np.datetime64(int(bad // 2), "D")
        raise IncompleteSession(f"{series.instrument_id} {day} session {int(bad % 2)}: "
                                f"{counts[counts != group][0]} of {group} bars")
    v = series.values[np.add.outer(start, np.arange(group))]   # (g, 8, 11)
    out = np.empty((len(uniq), N_FEATURES))
    out[:, OPEN] = v[:, 0, OPEN]
    out[:, CLOSE] = v[:, -1, CLOSE]
    out[:, HIGH] = v[:, :, HIGH].max(axis=1)
    out[:, LOW] = v[:, :, LOW].min(axis=1)
    for c in (VOLUME, AMOUNT, NOT):
        out[:, c] = v[:, :, c].sum(axis=1)
    vol = v[:, :, VOLUME]
    tot = vol.sum(axis=1)
    for c in (CR, VR):
        weighted = (v[:, :, c] * vol).sum(axis=1) / np.where(tot > 0, tot, 1.0)
        out[:, c] = np.where(tot > 0, weighted, v[:, :, c].mean(axis=1))
    for c in (CP, CS):
        out[:, c] = v[:, -1, c]
    return BarSeries(series.instrument_id, "120min",
                     np.array(uniq // 2, dtype="datetime64[D]"),
                     (uniq % 2).astype(np.int64), out)


def align_to_calendar(series: BarSeries, cal: TradingCalendar) -> BarSeries:
    """Keep only calendar days on which every bucket is present."""
    keep = np.intersect1d(series.complete_days(), cal.as_array())
    return series.select(np.isin(series.dates, keep))
