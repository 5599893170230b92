"""Seeded synthetic 15-minute bars with a planted, learnable next-day signal.

Each instrument-day draws a latent ``u`` in (-1, 1).  The afternoon buckets
of that day carry ``cr = 100 u`` (plus a little noise), while the first two
morning buckets pin ``cr`` at -100 and +100.  Because every day carries the
same anchors, per-window min-max scaling maps the afternoon ``cr`` values to
about ``(u + 1) / 2`` for any window that ends on that day, so the signal
survives normalization for both the 1-day and 5-day windows.

The next day's open-to-close return is::

    volatility * (s * z + sqrt(1 - s^2) * noise),    z = sqrt(3) * u

with ``s`` the signal strength, so ``s = 0`` makes labels independent of the
features and ``s = 1`` makes them a deterministic function of them.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .marketdata import (AMOUNT, CLOSE, CP, CR, CS, HIGH, LOW, N_FEATURES, NOT, OPEN,
                         VOLUME, VR, BarSeries)
from .rng import substream

BARS = 16
AFTERNOON = slice(8, 16)


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_instruments: int = 50
    n_days: int = 300
    signal_strength: float = 0.8
    volatility: float = 0.02
    price_scale: float = 10.0
    start_date: dt.date = dt.date(2019, 1, 2)

    def validate(self) -> None:
        if self.n_instruments < 1:
            raise InvalidConfig("n_instruments must be at least 1")
        if self.n_days < 12:
            raise InvalidConfig("n_days must be at least 12 (10 days of history for L windows plus a label day)")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise InvalidConfig("signal_strength must lie in [0, 1]")
        if self.volatility <= 0 or self.price_scale <= 0:
            raise InvalidConfig("volatility and price_scale must be positive")


@dataclass(frozen=True)
class TruthRow:
    instrument: str
    date: dt.date
    planted: float           # functional of the previous day's normalized features
    realized_return: float   # open-to-close return of ``date``


def trading_dates(start: dt.date, n: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def instrument_ids(n: int) -> list[str]:
    return [f"SH{600000 + i:06d}" for i in range(n)]


def planted_functional(window: np.ndarray) -> float:
    """Mean normalized commission ratio over the last 8 rows of a normalized window."""
    return float(np.mean(window[-8:, CR]))


def _generate_one(cfg: SynthConfig, k: int, dates: list[dt.date]):
    rng = substream(cfg.seed, "data", k)
    n = cfg.n_days
    u = rng.uniform(-1.0, 1.0, n)
    z = np.sqrt(3.0) * u
    s = cfg.signal_strength
    noise = rng.standard_normal(n)
    target = cfg.volatility * (s * np.roll(z, 1) + np.sqrt(1.0 - s * s) * noise)
    target[0] = cfg.volatility * noise[0]
    target = np.clip(target, -0.095, 0.095)

    bucket_vol = cfg.volatility / np.sqrt(BARS)
    steps = rng.standard_normal((n, BARS)) * bucket_vol
    steps += (np.log1p(target) - steps.sum(axis=1))[:, None] / BARS
    gaps = rng.standard_normal(n) * 0.2 * cfg.volatility

    vals = np.empty((n, BARS, N_FEATURES))
    prev_close = cfg.price_scale * np.exp(rng.uniform(-0.5, 0.5))
    for d in range(n):
        o0 = round(prev_close * np.exp(gaps[d]), 2)
        path = o0 * np.exp(np.cumsum(steps[d]))
        closes = np.round(path, 2)
        opens = np.concatenate([[o0], closes[:-1]])
        wig = np.abs(rng.standard_normal((2, BARS))) * bucket_vol * 0.5
        vals[d, :, OPEN] = opens
        vals[d, :, CLOSE] = closes
        vals[d, :, HIGH] = np.ceil(np.maximum(opens, closes) * (1 + wig[0]) * 100) / 100
        vals[d, :, LOW] = np.floor(np.minimum(opens, closes) * (1 - wig[1]) * 100) / 100
        prev_close = closes[-1]

    shape = np.exp(0.6 * np.abs(np.linspace(-1, 1, BARS)))          # U-shaped volume
    vol = np.round(rng.lognormal(13.0, 0.5, (n, BARS)) * shape / 100) * 100
    vals[:, :, VOLUME] = vol
    mid = (vals[:, :, OPEN] + vals[:, :, CLOSE]) / 2
    vals[:, :, AMOUNT] = np.round(vol * mid, 2)
    vals[:, :, NOT] = np.maximum(np.round(vol / rng.lognormal(7.0, 0.3, (n, BARS))), 1)
    cr = rng.uniform(-100.0, 100.0, (n, BARS))
    cr[:, 0], cr[:, 1] = -100.0, 100.0
    cr[:, AFTERNOON] = np.clip(100.0 * u[:, None] + rng.normal(0, 1.0, (n, 8)), -99.99, 99.99)
    vals[:, :, CR] = np.round(cr, 2)
    vals[:, :, VR] = np.round(rng.uniform(0.5, 2.5, (n, BARS)), 2)
    vals[:, :, CP] = np.round(rng.lognormal(18.5, 0.4, (n, BARS)))
    vals[:, :, CS] = np.round(rng.lognormal(18.5, 0.4, (n, BARS)))

    inst = instrument_ids(cfg.n_instruments)[k]
    series = BarSeries(inst, "15min",
                       np.repeat(np.array(dates, dtype="datetime64[D]"), BARS),
                       np.tile(np.arange(BARS), n), vals.reshape(n * BARS, N_FEATURES))
    realized = (vals[:, -1, CLOSE] - vals[:, 0, OPEN]) / vals[:, 0, OPEN]
    planted = (vals[:, AFTERNOON, CR].mean(axis=1) + 100.0) / 200.0
    truth = [TruthRow(inst, dates[d], float(planted[d - 1]) if d else float("nan"), float(realized[d]))
             for d in range(n)]
    return series, truth


def generate(cfg: SynthConfig) -> tuple[dict[str, BarSeries], list[TruthRow]]:
    """Bars for every instrument plus the truth table of planted values and returns."""
    cfg.validate()
    dates = trading_dates(cfg.start_date, cfg.n_days)
    series, truth = {}, []
    for k in range(cfg.n_instruments):
        s, t = _generate_one(cfg, k, dates)
        series[s.instrument_id] = s
        truth.extend(t)
    return series, truth


def write_truth(rows: list[TruthRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instrument", "date", "planted", "realized_return"])
        for r in rows:
            w.writerow([r.instrument, r.date.isoformat(),
                        "" if np.isnan(r.planted) else repr(r.planted), repr(r.realized_return)])
