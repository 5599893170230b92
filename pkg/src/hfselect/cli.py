"""Command-line entry point.

    hfselect [--config PATH] [--seed N] [--out DIR] [--print-config] COMMAND

Commands: synth, validate, calibrate, train, ablate, score, backtest.
Exit codes: 0 success, 1 data error, 2 config error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from pathlib import Path


from . import backtest as bt
from . import featurize as fz
from . import marketdata as md
from . import models as mdl
from . import plotting, scoring, synthgen
from .config import ConfigError, RunConfig

log = logging.getLogger("hfselect")

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

# strategy -> model ids, model id -> window kind
STRATEGY_MODELS = {"lstm": ("S", "L"), "cnn": ("CNN",)}
MODEL_WINDOWS = {"S": "S", "L": "L", "CNN": "CNN5D"}


class DataError(Exception):
    pass


# shared steps ---------------------------------------------------------------------

def load_data(cfg: RunConfig):
    path = cfg.path("bars")
    if path is None or not path.exists():
        raise DataError(f"bar file {path} not found (run `hfselect synth` or set [data] bars)")
    series = md.load_bars(path, "15min")
    universe = cfg.path("universe")
    if universe is not None:
        keep = md.Universe.load(universe)
        series = {k: v for k, v in series.items() if k in keep}
    if not series:
        raise DataError("no instruments left after applying the universe")
    return series, md.TradingCalendar.from_series(series)


def split_calendar(cfg: RunConfig, cal: md.TradingCalendar):
    """``(train dates, test dates, backtest dates)`` from the config or the 80/20 rule."""
    s = cfg.split()
    dates = list(cal.dates)
    if s["train_start"] or s["train_end"]:
        lo, hi = s["train_start"] or dates[0], s["train_end"] or dates[-1]
        train = [d for d in dates if lo <= d <= hi]
        lo2 = s["test_start"] or (hi + dt.timedelta(days=1))
        hi2 = s["test_end"] or dates[-1]
        test = [d for d in dates if lo2 <= d <= hi2]
    else:
        train, test = fz.split_dates(dates, cfg.train_fraction)
    if not train or not test:
        raise DataError("train or test date range is empty")
    lo3, hi3 = s["backtest_start"] or test[0], s["backtest_end"] or test[-1]
    backtest = [d for d in dates if lo3 <= d <= hi3]
    return train, test, backtest


def calibrate(cfg: RunConfig, series, cal) -> fz.LabelScheme:
    train_dates, _, _ = split_calendar(cfg, cal)
    lo, hi = train_dates[0], train_dates[-1]
    rets = []
    for s in series.values():
        days, r = fz.daily_returns(md.align_to_calendar(s, cal))
        days = days.astype(dt.date)
        rets.extend(r[(days >= lo) & (days <= hi)].tolist())
    scheme = fz.calibrate_labels(rets, sample=f"daily returns {lo} to {hi}, n={len(rets)}")
    scheme.save(cfg.out_dir / "label_scheme.txt")
    return scheme


def get_scheme(cfg: RunConfig, series, cal) -> fz.LabelScheme:
    path = cfg.out_dir / "label_scheme.txt"
    if path.exists():
        return fz.LabelScheme.load(path)
    return calibrate(cfg, series, cal)


def datasets(cfg: RunConfig, series, cal, scheme, kind: str):
    train_dates, test_dates, _ = split_calendar(cfg, cal)
    inst = fz.build_windows(series, kind, cal, scheme)
    tr = set(train_dates)
    te = set(test_dates)
    train = [i for i in inst if i.window.as_of_date in tr]
    test = [i for i in inst if i.window.as_of_date in te]
    if not train or not test:
        raise DataError(f"no {kind} windows in the train or test range")
    return mdl.as_arrays(train), mdl.as_arrays(test)


def model_config(cfg: RunConfig, model_id: str):
    return cfg.cnn() if model_id == "CNN" else cfg.lstm(MODEL_WINDOWS[model_id])


def write_model_reports(out: Path, tm: mdl.TrainedModel, test) -> None:
    mid = tm.model_id
    tm.write_log(out / f"train_log_{mid}.csv")
    _, conf = mdl.evaluate(tm, test)
    mdl.write_matrix(conf, out / f"confusion_{mid}.csv")
    mdl.write_matrix(mdl.normalize_confusion(conf, "column"), out / f"confusion_{mid}_colnorm.csv")
    mdl.write_matrix(mdl.normalize_confusion(conf, "row"), out / f"confusion_{mid}_rownorm.csv")
    plotting.plot_training_logs({mid: tm.log}, out / f"training_{mid}.svg", title=f"model {mid}")


def score_strategy(cfg: RunConfig, strategy: str, series, cal, scheme, dates):
    """Expected-return scores for every instrument-date the strategy's models can see."""
    probs: dict[str, dict] = {}
    for mid in STRATEGY_MODELS[strategy]:
        path = cfg.out_dir / f"model_{mid}.npz"
        if not path.exists():
            raise DataError(f"checkpoint {path} missing (run `hfselect train`)")
        tm = mdl.TrainedModel.load(path)
        inst = fz.build_windows(series, MODEL_WINDOWS[mid], cal, None, dates=dates, require_label=False)
        if not inst:
            probs[mid] = {}
            continue
        X, _ = fz.stack(inst)
        P = tm.model.predict_proba(X)
        probs[mid] = {(i.window.instrument_id, i.window.as_of_date): p for i, p in zip(inst, P)}
    keys = set.intersection(*(set(p) for p in probs.values()))
    scores = []
    for inst_id, d in sorted(keys, key=lambda k: (k[1], k[0])):
        sets = [scoring.ClassProbabilities(inst_id, d, tuple(probs[m][(inst_id, d)]), m)
                for m in STRATEGY_MODELS[strategy]]
        scores.append(scoring.expected_return(sets, scheme))
    return scores


# commands ------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    scfg = cfg.synth()
    try:
        series, truth = synthgen.generate(scfg)
    except synthgen.InvalidConfig as exc:
        raise ConfigError(str(exc)) from None
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    md.write_bars(series, cfg.path("bars"))
    synthgen.write_truth(truth, cfg.path("truth") or cfg.out_dir / "truth.csv")
    print(f"wrote {len(series)} instruments x {scfg.n_days} days to {cfg.path('bars')}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args) -> int:
    paths = args.paths or [cfg.path("bars")]
    status = EXIT_OK
    for path in paths:
        try:
            series, diags = md.check_bars(path, args.frequency)
        except md.EmptyInput as exc:
            print(f"{path}: EmptyInput: {exc}")
            status = EXIT_DATA
            continue
        except FileNotFoundError:
            print(f"{path}: file not found")
            status = EXIT_DATA
            continue
        for d in diags:
            print(f"{path}: {d}")
        n = sum(len(s) for s in series.values())
        print(f"{path}: {n} bars, {len(series)} instruments, {len(diags)} rejected rows")
        if diags:
            status = EXIT_DATA
    return status


def cmd_calibrate(cfg: RunConfig, args) -> int:
    series, cal = load_data(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    scheme = calibrate(cfg, series, cal)
    print(scheme.dumps(), end="")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    series, cal = load_data(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    scheme = get_scheme(cfg, series, cal)
    tcfg = cfg.train()
    for strategy in cfg.strategies:
        logs = {}
        for mid in STRATEGY_MODELS[strategy]:
            train, test = datasets(cfg, series, cal, scheme, MODEL_WINDOWS[mid])
            model = mdl.build_classifier(model_config(cfg, mid), cfg.seed)
            tm = mdl.train(model, train, test, tcfg, scheme, model_id=mid)
            tm.save(cfg.out_dir / f"model_{mid}.npz")
            write_model_reports(cfg.out_dir, tm, test)
            logs[mid] = tm.log
            ck = tm.log[tm.checkpoint_epoch - 1]
            print(f"model {mid}: {len(train[1])} train / {len(test[1])} test, "
                  f"checkpoint epoch {tm.checkpoint_epoch} test accuracy {ck.test_accuracy:.4f}")
        if len(logs) > 1:
            plotting.plot_training_logs(logs, cfg.out_dir / f"training_{strategy}.svg", title=strategy)
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args) -> int:
    if args.suite not in mdl.SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; choose from {', '.join(mdl.SUITES)}")
    series, cal = load_data(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    scheme = get_scheme(cfg, series, cal)
    variants = mdl.suite_variants(args.suite, cfg.lstm("S"), cfg.cnn(), cfg.train())
    data = {k: datasets(cfg, series, cal, scheme, k) for k in {v.model.window_kind for v in variants}}
    rows = mdl.run_ablation_suite(variants, data)
    mdl.write_ablation_table(rows, cfg.out_dir / f"ablation_{args.suite}.csv")
    plotting.plot_training_logs({r.name: r.trained.log for r in rows},
                                cfg.out_dir / f"ablation_{args.suite}.svg", title=args.suite)
    for rank, r in enumerate(rows, 1):
        print(f"{rank}. {r.name}: test accuracy {r.test_accuracy:.4f}")
    return EXIT_OK


def cmd_score(cfg: RunConfig, args) -> int:
    series, cal = load_data(cfg)
    scheme = get_scheme(cfg, series, cal)
    _, _, dates = split_calendar(cfg, cal)
    for strategy in cfg.strategies:
        scores = score_strategy(cfg, strategy, series, cal, scheme, dates)
        scoring.write_scores(scores, cfg.out_dir / f"scores_{strategy}.csv")
        print(f"{strategy}: {len(scores)} scores")
    return EXIT_OK


def cmd_backtest(cfg: RunConfig, args) -> int:
    series, cal = load_data(cfg)
    scheme = get_scheme(cfg, series, cal)
    _, _, dates = split_calendar(cfg, cal)
    prices = bt.day_prices({k: md.align_to_calendar(v, cal) for k, v in series.items()})
    out = cfg.out_dir
    for strategy in cfg.strategies:
        scores = score_strategy(cfg, strategy, series, cal, scheme, dates)
        scoring.write_scores(scores, out / f"scores_{strategy}.csv")
        report = bt.run_backtest(scores, prices, cfg.rule(), cfg.fees(), (dates[0], dates[-1]))
        bt.write_metrics(report, out / f"metrics_{strategy}.csv")
        bt.write_equity(report, out / f"equity_{strategy}.csv")
        bt.write_trades(report, out / f"trades_{strategy}.csv")
        plotting.plot_equity(report.dates, {
            f"{strategy} with fee": report.equity,
            f"{strategy} without fee": report.equity_no_fee,
            "baseline": report.baseline,
        }, out / f"equity_{strategy}.svg", title=f"{strategy} backtest")
        m = report.metrics
        print(f"{strategy}: {m['transaction_number']} transactions, "
              f"net profit {m['net_profit_rate']:.4%}, MDD {m['max_drawdown_rate']:.4%}")
        for note in report.diagnostics:
            log.warning(note)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "validate": cmd_validate, "calibrate": cmd_calibrate,
    "train": cmd_train, "ablate": cmd_ablate, "score": cmd_score, "backtest": cmd_backtest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="INI run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--print-config", action="store_true", default=argparse.SUPPRESS,
                        help="print the effective configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="hfselect", parents=[common], description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command")
    sub.add_parser("synth", parents=[common], help="generate synthetic bars")
    v = sub.add_parser("validate", parents=[common], help="check bar files")
    v.add_argument("paths", nargs="*", type=Path)
    v.add_argument("--frequency", default="15min", choices=sorted(md.BUCKETS))
    sub.add_parser("calibrate", parents=[common], help="fit quartile labels on the training dates")
    sub.add_parser("train", parents=[common], help="train the strategy's models")
    a = sub.add_parser("ablate", parents=[common], help="run a comparison suite")
    a.add_argument("suite", help=", ".join(mdl.SUITES))
    sub.add_parser("score", parents=[common], help="write expected-return scores")
    sub.add_parser("backtest", parents=[common], help="score and backtest")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(getattr(args, "config", None), getattr(args, "seed", None),
                             getattr(args, "out", None))
        if getattr(args, "print_config", False):
            print(cfg.dumps(), end="")
            return EXIT_OK
        if not args.command:
            parser.print_help()
            return EXIT_CONFIG
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, mdl.InvalidConfig, mdl.UnknownSuite) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, md.MarketDataError, fz.FeaturizeError, mdl.EmptyDataset,
            bt.EmptyRange, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
