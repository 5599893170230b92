"""Daily-rebalance backtest: buy the top-ranked names at the open, sell at the close."""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .marketdata import CLOSE, OPEN, BarSeries
from .scoring import ExpectedReturnScore, rank_candidates

UNDEFINED = float("nan")


class EmptyRange(ValueError):
    pass


class EmptyCurve(ValueError):
    pass


class MisalignedDates(ValueError):
    pass


@dataclass(frozen=True)
class FeeSchedule:
    rate: float = 0.001          # per side, fraction of notional

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("fee rate must be non-negative")


@dataclass(frozen=True)
class SelectionRule:
    max_positions: int = 20
    threshold: float = 0.0014

    def __post_init__(self):
        if self.max_positions < 1 or not math.isfinite(self.threshold):
            raise ValueError("max_positions must be >= 1 and threshold finite")


@dataclass(frozen=True)
class TradeRecord:
    date: dt.date
    instrument: str
    entry: float
    exit: float
    weight: float
    gross: float
    fee: float
    net: float


@dataclass(frozen=True)
class DayRecord:
    """One rebalance: portfolio-level contributions of the day's positions."""

    date: dt.date
    positions: int
    gross: float
    fee: float
    net: float


@dataclass
class BacktestReport:
    dates: list[dt.date]
    equity: np.ndarray
    equity_no_fee: np.ndarray
    baseline: np.ndarray | None
    days: list[DayRecord]
    trades: list[TradeRecord]
    metrics: dict[str, float]
    diagnostics: list[str] = field(default_factory=list)

    @property
    def transactions(self) -> list[DayRecord]:
        return [d for d in self.days if d.positions > 0]


DayPrices = Mapping[dt.date, Mapping[str, tuple[float, float]]]


def day_prices(series_map: Mapping[str, BarSeries]) -> dict[dt.date, dict[str, tuple[float, float]]]:
    """``{date: {instrument: (day open, day close)}}`` over complete days."""
    out: dict = {}
    for inst, s in series_map.items():
        days, cube = s.day_matrix()
        for d, o, c in zip(days.tolist(), cube[:, 0, OPEN], cube[:, -1, CLOSE]):
            out.setdefault(d, {})[inst] = (float(o), float(c))
    return out


def select_portfolio(day_scores: Sequence[ExpectedReturnScore], rule: SelectionRule) -> list[tuple[str, float]]:
    """Equal-weight the top ``max_positions`` names whose score clears the threshold."""
    ranked = rank_candidates(day_scores)
    chosen = [s.instrument_id for s in ranked if s.expected >= rule.threshold][:rule.max_positions]
    if not chosen:
        return []
    w = 1.0 / len(chosen)
    return [(inst, w) for inst in chosen]


def simulate_day(portfolio: Sequence[tuple[str, float]], prices: Mapping[str, tuple[float, float]],
                 fees: FeeSchedule, date: dt.date | None = None):
    """Return ``(day return, trades, diagnostics)`` for one day.

    A name without a bar that day is skipped and its weight stays in cash.
    """
    trades, notes = [], []
    for inst, w in portfolio:
        if inst not in prices:
            notes.append(f"{date}: no bars for {inst}; weight {w!r} held as cash")
            continue
        o, c = prices[inst]
        gross = (c - o) / o
        fee = 2.0 * fees.rate
        trades.append(TradeRecord(date, inst, o, c, w, gross, fee, gross - fee))
    ret = math.fsum(t.weight * t.net for t in trades)
    return ret, trades, notes


def max_drawdown(equity) -> float:
    """Largest relative fall from a running peak, as a positive fraction."""
    peak, mdd = -math.inf, 0.0
    for v in equity:
        peak = max(peak, v)
        mdd = max(mdd, (peak - v) / peak)
    return mdd


def compute_metrics(equity: Sequence[float], transactions: Sequence[DayRecord],
                    baseline: Sequence[float] | None = None,
                    trades: Sequence[TradeRecord] | None = None) -> dict[str, float]:
    """Summary metrics of a run.

    Rates come in two conventions: ``*_simple`` sums daily contributions,
    the unsuffixed / ``*_compounded`` ones compound them.  ``winning_rate``
    counts rebalance days with a positive net return; the ``round_trip*``
    pair counts individual instrument positions instead.
    """
    eq = np.asarray(equity, dtype=np.float64)
    if eq.size == 0:
        raise EmptyCurve("equity curve is empty")
    tx = [t for t in transactions if t.positions > 0]
    gross = np.array([t.gross for t in tx])
    fee = np.array([t.fee for t in tx])
    net_c = float(eq[-1] / eq[0] - 1.0)
    profit_c = float(np.prod(1.0 + gross) - 1.0) if tx else 0.0
    mdd = max_drawdown(eq)
    m = {
        "transaction_number": len(tx),
        "winning_rate": float(np.mean([t.net > 0 for t in tx])) if tx else UNDEFINED,
        "profit_rate_simple": float(gross.sum()),
        "fee_cost_rate_simple": float(fee.sum()),
        "net_profit_rate_simple": float(gross.sum() - fee.sum()),
        "profit_rate_compounded": profit_c,
        "fee_cost_rate_compounded": profit_c - net_c,
        "net_profit_rate": net_c,
        "max_drawdown_rate": mdd,
        "interest_mdd_ratio": net_c / mdd if mdd > 0 else UNDEFINED,
    }
    if trades is not None:
        m["round_trips"] = len(trades)
        m["round_trip_winning_rate"] = (float(np.mean([t.net > 0 for t in trades]))
                                        if trades else UNDEFINED)
    if baseline is not None and len(baseline):
        b = np.asarray(baseline, dtype=np.float64)
        m["baseline_simple_interest"] = float((b[-1] - b[0]) / b[0])
    return m


def equal_weight_baseline(prices: DayPrices, dates: Sequence[dt.date]) -> np.ndarray:
    """Index level per date (start 1.0) from equal-weighted close-to-close returns.

    A name's first appearance in the range measures from its open.
    """
    last_close: dict[str, float] = {}
    level, out = 1.0, []
    for d in dates:
        rets = []
        for inst, (o, c) in sorted(prices.get(d, {}).items()):
            ref = last_close.get(inst, o)
            rets.append(c / ref - 1.0)
            last_close[inst] = c
        level *= 1.0 + (float(np.mean(rets)) if rets else 0.0)
        out.append(level)
    return np.array(out)


def run_backtest(scores: Iterable[ExpectedReturnScore], prices: DayPrices, rule: SelectionRule,
                 fees: FeeSchedule, date_range: tuple[dt.date, dt.date] | None = None,
                 baseline: Sequence[float] | None = None) -> BacktestReport:
    """Simulate every trading day in ``date_range`` and compound into equity curves.

    Trading days are the dates present in ``prices``.  Without an explicit
    ``baseline`` an equal-weight index of all priced names is used.
    """
    by_date: dict = {}
    for s in scores:
        by_date.setdefault(s.as_of_date, []).append(s)
    dates = sorted(prices)
    if date_range is not None:
        lo, hi = date_range
        dates = [d for d in dates if lo <= d <= hi]
    if not dates:
        raise EmptyRange("no trading days in range")
    equity, equity_nf = [], []
    e = e_nf = 1.0
    days, trades, notes = [], [], []
    for d in dates:
        portfolio = select_portfolio(by_date.get(d, []), rule)
        r, day_trades, day_notes = simulate_day(portfolio, prices[d], fees, d)
        gross = math.fsum(t.weight * t.gross for t in day_trades)
        fee = math.fsum(t.weight * t.fee for t in day_trades)
        e *= 1.0 + r
        e_nf *= 1.0 + gross
        equity.append(e)
        equity_nf.append(e_nf)
        days.append(DayRecord(d, len(day_trades), gross, fee, r))
        trades.extend(day_trades)
        notes.extend(day_notes)
    base = equal_weight_baseline(prices, dates) if baseline is None else np.asarray(baseline, float)
    if len(base) != len(dates):
        raise MisalignedDates("baseline length differs from the backtest dates")
    curve = np.concatenate([[1.0], equity])
    metrics = compute_metrics(curve, days, np.concatenate([[1.0], base]) if baseline is None else base,
                              trades)
    return BacktestReport(dates, np.array(equity), np.array(equity_nf), base, days, trades,
                          metrics, notes)


def compare_baseline(report: BacktestReport, baseline: Mapping[dt.date, float] | None = None):
    """Rows ``(date, strategy equity, baseline equity, excess)`` aligned by date."""
    if baseline is None:
        base_dates, base = report.dates, report.baseline
    else:
        base_dates, base = sorted(baseline), [baseline[d] for d in sorted(baseline)]
    if list(base_dates) != list(report.dates):
        raise MisalignedDates("baseline dates do not match the report")
    return [(d, float(s), float(b), float(s - b)) for d, s, b in zip(report.dates, report.equity, base)]


METRIC_LABELS = {
    "time_begin": "Time Begin",
    "time_end": "Time End",
    "baseline_simple_interest": "Baseline Simple Interest Rate",
    "transaction_number": "Transaction Number",
    "winning_rate": "Winning Rate",
    "round_trips": "Round Trips (instrument positions)",
    "round_trip_winning_rate": "Round-Trip Winning Rate",
    "profit_rate_simple": "Profit in Rate (simple sum)",
    "fee_cost_rate_simple": "Fee Cost in Rate (simple sum)",
    "net_profit_rate_simple": "Net Profit in Rate (simple sum)",
    "profit_rate_compounded": "Profit in Rate (compounded)",
    "fee_cost_rate_compounded": "Fee Cost in Rate (compounded)",
    "net_profit_rate": "Net Profit in Rate",
    "max_drawdown_rate": "Maximal Draw Down in Rate",
    "interest_mdd_ratio": "Interest/MDD (Rate)",
}


def _fmt(v) -> str:
    if isinstance(v, float) and math.isnan(v):
        return "undefined"
    return repr(v)


def write_metrics(report: BacktestReport, path: str | Path) -> None:
    values = {"time_begin": report.dates[0].isoformat(), "time_end": report.dates[-1].isoformat(),
              **report.metrics}
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "label", "value"])
        for key, label in METRIC_LABELS.items():
            if key in values:
                v = values[key]
                w.writerow([key, label, v if isinstance(v, str) else _fmt(v)])


def write_equity(report: BacktestReport, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "equity", "equity_no_fee", "baseline", "positions", "day_return"])
        for d, e, enf, b, day in zip(report.dates, report.equity, report.equity_no_fee,
                                     report.baseline, report.days):
            w.writerow([d.isoformat(), repr(float(e)), repr(float(enf)), repr(float(b)),
                        day.positions, repr(day.net)])


def write_trades(report: BacktestReport, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "instrument", "entry", "exit", "weight", "gross", "fee", "net"])
        for t in report.trades:
            w.writerow([t.date.isoformat(), t.instrument, repr(t.entry), repr(t.exit),
                        repr(t.weight), repr(t.gross), repr(t.fee), repr(t.net)])
