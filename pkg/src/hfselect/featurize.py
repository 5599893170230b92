"""Windowed, normalized and labeled training instances.

Three window kinds feed the classifiers:

=======  =========================================  =========
kind     contents                                   shape
=======  =========================================  =========
``S``    the previous day's 15-minute bars          16 x 11
``L``    the previous 10 days' 120-minute bars      20 x 11
``CNN5D`` the previous 5 days' 15-minute bars        80 x 11
=======  =========================================  =========

Labels are quartile buckets of the as-of day's open-to-close return.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .marketdata import (CLOSE, N_FEATURES, OPEN, BarSeries,
                         TradingCalendar, align_to_calendar, resample)

CLASS_NAMES = ("FallSharply", "FallSlightly", "RiseSlightly", "RiseSharply")
N_CLASSES = len(CLASS_NAMES)

# kind -> (bar frequency, days of history, steps)
WINDOW_KINDS = {
    "S": ("15min", 1, 16),
    "L": ("120min", 10, 20),
    "CNN5D": ("15min", 5, 80),
}


class FeaturizeError(ValueError):
    pass


class ZeroOpen(FeaturizeError):
    pass


class TooFewSamples(FeaturizeError):
    pass


class TooFewDates(FeaturizeError):
    pass


class NonFiniteInput(FeaturizeError):
    pass


@dataclass(frozen=True)
class LabelScheme:
    cuts: tuple[float, float, float]
    class_means: tuple[float, float, float, float]
    sample: str = ""

    def __post_init__(self):
        q1, q2, q3 = self.cuts
        if not q1 < q2 < q3:
            raise ValueError(f"cut points must increase: {self.cuts}")

    @property
    def q1(self) -> float:
        return self.cuts[0]

    @property
    def q2(self) -> float:
        return self.cuts[1]

    @property
    def q3(self) -> float:
        return self.cuts[2]

    def check(self) -> None:
        """Raise unless each class mean sits inside its own interval."""
        lo = (-np.inf,) + self.cuts
        hi = self.cuts + (np.inf,)
        for k, w in enumerate(self.class_means):
            if not lo[k] <= w < hi[k]:
                raise ValueError(f"class {k} mean {w} outside [{lo[k]}, {hi[k]})")
        if any(b <= a for a, b in zip(self.class_means, self.class_means[1:])):
            raise ValueError("class means must increase")

    def dumps(self) -> str:
        lines = [f"# {self.sample}"] if self.sample else []
        for name, v in zip(("q1", "q2", "q3"), self.cuts):
            lines.append(f"{name}={v!r}")
        for k, v in enumerate(self.class_means):
            lines.append(f"w{k}={v!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "LabelScheme":
        kv, sample = {}, ""
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("#"):
                sample = line[1:].strip()
            elif line:
                k, v = line.split("=", 1)
                kv[k.strip()] = float(v)
        return cls((kv["q1"], kv["q2"], kv["q3"]),
                   tuple(kv[f"w{k}"] for k in range(N_CLASSES)), sample)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "LabelScheme":
        return cls.loads(Path(path).read_text())


@dataclass(frozen=True)
class FeatureWindow:
    instrument_id: str
    as_of_date: dt.date
    matrix: np.ndarray
    window_kind: str


@dataclass(frozen=True)
class LabeledInstance:
    window: FeatureWindow
    label: int
    realized_return: float


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[dt.date, dt.date]
    test: tuple[dt.date, dt.date]


def daily_return(day_bars) -> float:
    """Open-to-close return of one complete day: ``(last close - first open) / first open``."""
    v = day_bars.values if isinstance(day_bars, BarSeries) else np.asarray(day_bars)
    first_open = v[0, OPEN]
    if first_open == 0:
        raise ZeroOpen("open price is zero")
    return float((v[-1, CLOSE] - first_open) / first_open)


def daily_returns(series: BarSeries) -> tuple[np.ndarray, np.ndarray]:
    """``(days, returns)`` for every complete day of a series."""
    days, cube = series.day_matrix()
    opens = cube[:, 0, OPEN]
    if np.any(opens == 0):
        raise ZeroOpen(f"{series.instrument_id}: zero open price")
    return days, (cube[:, -1, CLOSE] - opens) / opens


def calibrate_labels(returns: Sequence[float], sample: str = "") -> LabelScheme:
    """Quartile cut points and per-class mean returns of a return sample."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size < 8:
        raise TooFewSamples(f"need at least 8 returns, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise NonFiniteInput("returns must be finite")
    cuts = tuple(float(q) for q in np.percentile(r, [25, 50, 75], method="linear"))
    labels = np.searchsorted(np.array(cuts), r, side="right")
    means = tuple(float(r[labels == k].mean()) if np.any(labels == k) else float("nan")
                  for k in range(N_CLASSES))
    return LabelScheme(cuts, means, sample)


def classify(r, scheme: LabelScheme):
    """Class index of a return (or array of returns); intervals are half-open ``[q, next)``."""
    out = np.searchsorted(np.array(scheme.cuts), r, side="right")
    return int(out) if np.ndim(out) == 0 else out


def normalize_window(raw: np.ndarray) -> np.ndarray:
    """Per-column min-max scaling over the window's own time axis.

    Constant columns map to zero.  Works on a single ``(steps, F)`` matrix or
    a stack of them ``(..., steps, F)``.
    """
    x = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("window contains non-finite values")
    lo = x.min(axis=-2, keepdims=True)
    span = x.max(axis=-2, keepdims=True) - lo
    safe = np.where(span == 0, 1.0, span)
    return np.where(span == 0, 0.0, (x - lo) / safe)


def _prepared(series: BarSeries, kind: str, cal: TradingCalendar) -> BarSeries:
    freq = WINDOW_KINDS[kind][0]
    s15 = align_to_calendar(series, cal)
    return resample(s15, "120min") if freq == "120min" else s15


def build_windows(series_map: dict[str, BarSeries], kind: str, cal: TradingCalendar,
                  scheme: LabelScheme | None = None, *,
                  dates: Sequence[dt.date] | None = None,
                  require_label: bool = True) -> list[LabeledInstance]:
    """Labeled windows for every instrument-date with enough clean history.

    The history for an as-of date is the ``n`` calendar days before it, all of
    which must be complete (a suspension inside the window skips the
    instance).  With ``require_label=False`` the as-of day itself may be
    missing; such instances carry label ``-1`` and a NaN return, which is what
    live scoring needs.  ``dates`` restricts the as-of dates.
    """
    if kind not in WINDOW_KINDS:
        raise ValueError(f"unknown window kind {kind!r}")
    if require_label and scheme is None:
        raise ValueError("a label scheme is required for labeled windows")
    freq, n_days, steps = WINDOW_KINDS[kind]
    cal_days = cal.dates
    wanted = None if dates is None else set(dates)
    out: list[LabeledInstance] = []
    for inst in sorted(series_map):
        s = _prepared(series_map[inst], kind, cal)
        if len(s) == 0:
            continue
        days, cube = s.day_matrix()
        pos = {d: i for i, d in enumerate(days.tolist())}
        s15_days, s15_returns = daily_returns(align_to_calendar(series_map[inst], cal))
        ret = dict(zip(s15_days.tolist(), s15_returns.tolist()))
        for ci in range(n_days, len(cal_days)):
            as_of = cal_days[ci]
            if wanted is not None and as_of not in wanted:
                continue
            hist = [pos.get(d) for d in cal_days[ci - n_days:ci]]
            if any(h is None for h in hist):
                continue
            r = ret.get(as_of)
            if r is None:
                if require_label:
                    continue
                label, r = -1, float("nan")
            else:
                label = classify(r, scheme) if scheme is not None else -1
            raw = cube[hist].reshape(steps, N_FEATURES)
            window = FeatureWindow(inst, as_of, normalize_window(raw), kind)
            out.append(LabeledInstance(window, label, r))
    return out


def stack(instances: Sequence[LabeledInstance]) -> tuple[np.ndarray, np.ndarray]:
    """``(X, y)`` arrays for a list of instances."""
    if not instances:
        return np.empty((0, 0, N_FEATURES)), np.empty(0, dtype=np.int64)
    X = np.stack([i.window.matrix for i in instances])
    y = np.array([i.label for i in instances], dtype=np.int64)
    return X, y


def split_dates(dates: Sequence[dt.date], frac: float = 0.8) -> tuple[list, list]:
    """Distinct dates split chronologically: the first ``floor(frac * n)`` train."""
    uniq = sorted(set(dates))
    if len(uniq) < 2:
        raise TooFewDates(f"need at least 2 distinct dates, got {len(uniq)}")
    n_train = min(max(int(np.floor(frac * len(uniq))), 1), len(uniq) - 1)
    return uniq[:n_train], uniq[n_train:]


def chronological_split(instances: Sequence[LabeledInstance], frac: float = 0.8):
    """Split instances by as-of date so every test date follows every train date."""
    train_dates, _ = split_dates([i.window.as_of_date for i in instances], frac)
    cutoff = train_dates[-1]
    key = lambda i: (i.window.as_of_date, i.window.instrument_id)
    ordered = sorted(instances, key=key)
    train = [i for i in ordered if i.window.as_of_date <= cutoff]
    test = [i for i in ordered if i.window.as_of_date > cutoff]
    return train, test
