"""The ten numbered acceptance criteria.

Each test carries ``@pytest.mark.acceptance(n, title)``; the conftest hook
prints one PASS/FAIL line per criterion at the end of the run.
"""
import datetime as dt
import itertools
import time

import numpy as np
import pytest

from hfselect import backtest as bt
from hfselect import cli
from hfselect import featurize as fz
from hfselect import marketdata as md
from hfselect import models as M
from hfselect import nn
from hfselect import scoring as sc
from hfselect import synthgen as sg
from hfselect.nn import layers as L
from hfselect.nn import tensor as T

# 1. gradients ----------------------------------------------------------------------

STEP = 1e-5


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def numeric_grad(f, t):
    g = np.zeros_like(t.data)
    flat, gflat = t.data.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + STEP
        up = float(f().data)
        flat[k] = old - STEP
        down = float(f().data)
        flat[k] = old
        gflat[k] = (up - down) / (2 * STEP)
    return g


def worst_error(f, inputs):
    grads = nn.gradients(f(), inputs)
    return max(rel_error(g, numeric_grad(f, t)) for t, g in zip(inputs, grads))


def case_dense(rng):
    layer = nn.Dense(6, 4, rng)
    layer.b.data += rng.normal(0, 0.1, 4)
    x = T.Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    return lambda: (layer(x) * w).sum(), [x, layer.W, layer.b]


def case_conv(rng):
    conv = nn.Conv1xF(11, 5, rng)
    conv.b.data += rng.normal(0, 0.2, 5)
    x = T.Tensor(rng.normal(size=(2, 4, 11)), requires_grad=True)
    w = rng.normal(size=(2, 4, 5))
    return lambda: (conv(x) * w).sum(), [x, conv.kernels, conv.b]


def case_lstm(rng):
    lstm = nn.LSTM(4, 3, rng)
    for t in lstm.ordered():
        t.data += rng.normal(0, 0.3, t.shape)
    x = T.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w = rng.normal(size=(2, 3, 3))
    return lambda: (lstm(x, return_sequence=True) * w).sum(), [x, *lstm.ordered()]


def case_softmax_ce(rng):
    z = T.Tensor(rng.normal(0, 2, (5, 4)), requires_grad=True)
    y = nn.one_hot(rng.integers(0, 4, 5))
    return lambda: nn.cross_entropy_loss(nn.softmax(z), y), [z]


def case_l2(rng):
    ws = [T.Tensor(rng.normal(size=s), requires_grad=True) for s in ((3, 4), (4,), (2, 2, 2))]
    lam = float(rng.uniform(0.1, 10))
    return lambda: nn.l2_penalty(ws, lam), ws


@pytest.mark.acceptance(1, "gradients match central finite differences")
@pytest.mark.parametrize("case", [case_dense, case_conv, case_lstm, case_softmax_ce, case_l2],
                         ids=["dense", "conv1xF", "lstm", "softmax_ce", "l2"])
def test_gradients_match_finite_differences(case, acceptance_note):
    start = time.perf_counter()
    worst = max(worst_error(*case(np.random.default_rng(seed))) for seed in range(20))
    assert worst < 1e-4
    assert time.perf_counter() - start < 60
    acceptance_note(f"{case.__name__[5:]} max rel err {worst:.1e}")


# 2. LSTM equations -----------------------------------------------------------------

def transcription(x, h, c, p):
    """The six cell equations written out term by term."""
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))
    i_t = sig(x @ p.W_xi + h @ p.W_hi + p.b_i)
    f_t = sig(x @ p.W_xf + h @ p.W_hf + p.b_f)
    o_t = sig(x @ p.W_xo + h @ p.W_ho + p.b_o)
    g_t = np.tanh(x @ p.W_xg + h @ p.W_hg + p.b_g)
    c_t = f_t * c + i_t * g_t
    h_t = o_t * np.tanh(c_t)
    return h_t, c_t


@pytest.mark.acceptance(2, "LSTM cell matches the equation transcription")
def test_lstm_cell_fidelity(acceptance_note):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d, h = int(rng.integers(1, 12)), int(rng.integers(1, 10))
        p = L.LstmCellParams(**{f"W_x{g}": rng.normal(size=(d, h)) for g in L.GATES},
                             **{f"W_h{g}": rng.normal(size=(h, h)) for g in L.GATES},
                             **{f"b_{g}": rng.normal(size=h) for g in L.GATES})
        x, hp, cp = rng.normal(size=d), rng.normal(size=h), rng.normal(size=h)
        got, want = nn.lstm_cell_forward(x, hp, cp, p), transcription(x, hp, cp, p)
        worst = max(worst, *(np.abs(a - b).max() for a, b in zip(got, want)))
    assert worst <= 1e-12
    acceptance_note(f"max abs diff {worst:.1e}")


# 3. normalization ------------------------------------------------------------------

@pytest.mark.acceptance(3, "window normalization properties")
def test_normalization_properties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        steps = int(rng.integers(2, 30))
        x = rng.normal(0, 10, (steps, 11))
        const = rng.random(11) < 0.2
        x[:, const] = rng.normal()
        n = fz.normalize_window(x)
        assert n.min() >= 0 and n.max() <= 1
        assert np.all(n[:, const] == 0)
        assert np.all(n[:, ~const].max(axis=0) == 1) and np.all(n[:, ~const].min(axis=0) == 0)
        np.testing.assert_allclose(fz.normalize_window(n), n, atol=1e-12)
        a, b = rng.uniform(0.01, 100, 11), rng.normal(0, 100, 11)
        np.testing.assert_allclose(fz.normalize_window(a * x + b), n, atol=1e-9)


# 4. quartile labels ---------------------------------------------------------------

def percentile_oracle(r, p):
    x = sorted(r)
    h = (len(x) - 1) * p / 100
    lo = int(np.floor(h))
    return x[lo] + (h - lo) * (x[min(lo + 1, len(x) - 1)] - x[lo])


@pytest.mark.acceptance(4, "quartile cut points and class balance")
def test_quartile_labels():
    rng = np.random.default_rng(1)
    for _ in range(50):
        r = rng.standard_t(4, int(rng.integers(8, 2000))) * 0.02
        scheme = fz.calibrate_labels(r)
        for got, p in zip(scheme.cuts, (25, 50, 75)):
            assert abs(got - percentile_oracle(r, p)) <= 1e-12
        counts = np.bincount(fz.classify(r, scheme), minlength=4)
        assert np.all(np.abs(counts - len(r) / 4) <= 2), counts


# 5. learnability ------------------------------------------------------------------

LEARN_EPOCHS = 10


def synth_datasets(signal):
    cfg = sg.SynthConfig(seed=2024, n_instruments=50, n_days=300, signal_strength=signal)
    series, _ = sg.generate(cfg)
    dates = sg.trading_dates(cfg.start_date, cfg.n_days)
    cal = md.TradingCalendar(tuple(dates))
    train_dates, test_dates = fz.split_dates(dates, 0.8)
    rets = [r for s in series.values()
            for d, r in zip(*fz.daily_returns(s)) if d.astype(dt.date) <= train_dates[-1]]
    scheme = fz.calibrate_labels(rets)
    out = {}
    for kind in ("S", "CNN5D"):
        inst = fz.build_windows(series, kind, cal, scheme)
        tr = [i for i in inst if i.window.as_of_date <= train_dates[-1]]
        te = [i for i in inst if i.window.as_of_date >= test_dates[0]]
        out[kind] = (fz.stack(tr), fz.stack(te))
    return out


def trained_accuracy(data, config):
    train, test = data[config.window_kind]
    tcfg = M.TrainConfig(epochs=LEARN_EPOCHS, seed=2024)
    tm = M.train(M.build_classifier(config, tcfg.seed), train, test, tcfg)
    return M.evaluate(tm, test)[0]


@pytest.fixture(scope="module")
def learnability():
    start = time.perf_counter()
    acc = {}
    for signal in (0.8, 0.0):
        data = synth_datasets(signal)
        acc[signal] = {"LSTM-S": trained_accuracy(data, M.LstmClassifierConfig("S")),
                       "CNN-5D": trained_accuracy(data, M.CnnClassifierConfig())}
    return acc, time.perf_counter() - start


@pytest.mark.slow
@pytest.mark.acceptance(5, "planted signal is learnable, noise is not")
def test_learnability(learnability, acceptance_note):
    acc, seconds = learnability
    acceptance_note(", ".join(f"s={s} {k} {v:.3f}" for s, row in acc.items() for k, v in row.items())
                    + f", {seconds:.0f}s")
    assert all(v >= 0.35 for v in acc[0.8].values())
    assert all(abs(v - 0.25) <= 0.03 for v in acc[0.0].values())
    assert seconds < 15 * 60


# 6. ensemble scorer -----------------------------------------------------------------

@pytest.mark.acceptance(6, "expected-return scorer matches dot-product oracle")
def test_expected_return_oracle():
    rng = np.random.default_rng(6)
    d = dt.date(2019, 1, 2)
    for _ in range(1000):
        p = rng.dirichlet(np.ones(4))
        w = np.sort(rng.normal(0, 0.02, 4))
        scheme = fz.LabelScheme((-1.0, 0.0, 1.0), tuple(w))
        got = sc.expected_return([sc.ClassProbabilities("X", d, tuple(p))], scheme).expected
        assert abs(got - sum(pk * wk for pk, wk in zip(p, w))) <= 1e-12
        p2 = rng.dirichlet(np.ones(4))
        two = sc.expected_return([sc.ClassProbabilities("X", d, tuple(p)),
                                  sc.ClassProbabilities("X", d, tuple(p2))], scheme).expected
        half_sum = 0.5 * (sum(p[k] * w[k] for k in range(4)) + sum(p2[k] * w[k] for k in range(4)))
        assert abs(two - half_sum) <= 1e-12


# 7. backtest engine -----------------------------------------------------------------

def random_run(rng):
    n_days, n_inst = int(rng.integers(5, 40)), int(rng.integers(1, 30))
    days = [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(n_days)]
    prices, scores = {}, []
    for d in days:
        prices[d] = {}
        for i in range(n_inst):
            if rng.random() < 0.05:
                continue
            o = float(rng.uniform(2, 50))
            prices[d][f"I{i:03d}"] = (o, o * float(np.exp(rng.normal(0, 0.03))))
            scores.append(sc.ExpectedReturnScore(f"I{i:03d}", d, float(rng.normal(0.001, 0.004))))
    return prices, scores


def scalar_resimulation(prices, scores, rule, rate):
    eq, out = 1.0, []
    for d in sorted(prices):
        day = sorted((s for s in scores if s.as_of_date == d), key=lambda s: (-s.expected, s.instrument_id))
        picks = [s.instrument_id for s in day if s.expected >= rule.threshold][:rule.max_positions]
        w = 1.0 / len(picks) if picks else 0.0
        r = 0.0
        for inst in picks:
            if inst in prices[d]:
                o, c = prices[d][inst]
                r += w * ((c - o) / o - 2 * rate)
        eq *= 1.0 + r
        out.append(eq)
    return np.array(out)


def brute_mdd(curve):
    return max([0.0] + [(curve[i] - curve[j]) / curve[i] for i, j in itertools.combinations(range(len(curve)), 2)])


@pytest.mark.acceptance(7, "backtest matches re-simulation, MDD brute force, fee monotone")
def test_backtest_engine():
    rng = np.random.default_rng(7)
    for _ in range(100):
        prices, scores = random_run(rng)
        rule = bt.SelectionRule(int(rng.integers(1, 25)), float(rng.normal(0.001, 0.002)))
        finals = []
        for rate in (0.0, 0.0005, 0.001, 0.002):
            rep = bt.run_backtest(scores, prices, rule, bt.FeeSchedule(rate))
            oracle = scalar_resimulation(prices, scores, rule, rate)
            assert np.max(np.abs(rep.equity - oracle)) <= 1e-12
            curve = np.concatenate([[1.0], rep.equity])
            assert abs(rep.metrics["max_drawdown_rate"] - brute_mdd(curve)) <= 1e-12
            finals.append(rep.equity[-1])
        assert all(a >= b for a, b in zip(finals, finals[1:]))


# 8. selection rule ------------------------------------------------------------------

@pytest.mark.acceptance(8, "at most 20 positions, none below the 0.14% threshold")
def test_selection_rule():
    rng = np.random.default_rng(8)
    rule = bt.SelectionRule(20, 0.0014)
    d = dt.date(2019, 1, 2)
    for _ in range(2000):
        n = int(rng.integers(0, 80))
        values = rng.normal(0.0014, 0.002, n)
        values[rng.random(n) < 0.1] = 0.0014
        scores = [sc.ExpectedReturnScore(f"I{i:03d}", d, float(v)) for i, v in enumerate(values)]
        port = bt.select_portfolio(scores, rule)
        eligible = sorted((s for s in scores if s.expected >= 0.0014), key=lambda s: (-s.expected, s.instrument_id))
        assert len(port) <= 20
        assert [n for n, _ in port] == [s.instrument_id for s in eligible[:20]]
        by_id = {s.instrument_id: s.expected for s in scores}
        assert all(by_id[n] >= 0.0014 for n, _ in port)


# 9. end-to-end determinism ---------------------------------------------------------------

PIPELINE_INI = """\
[run]
strategy = both
out = {out}
[synth]
n_instruments = 12
n_days = 60
[lstm]
hidden_size = 16
[cnn]
num_kernels = 8
dense_sizes = 32,16
[train]
epochs = 4
early_stop_epoch = 3
"""


@pytest.mark.acceptance(9, "two pipeline runs give byte-identical CSVs")
def test_pipeline_determinism(tmp_path, capsys):
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        ini = tmp_path / f"{name}.ini"
        ini.write_text(PIPELINE_INI.format(out=out))
        for cmd in ("synth", "train", "backtest"):
            assert cli.main(["--config", str(ini), "--seed", "11", cmd]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    assert names == sorted(p.name for p in outs[1].glob("*.csv")) and len(names) > 10
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n


# 10. checkpoint truncation ------------------------------------------------------------------

@pytest.mark.acceptance(10, "epoch-20 checkpoint of a 50-epoch run equals a 20-epoch run")
@pytest.mark.parametrize("config", [M.LstmClassifierConfig("S", 8), M.CnnClassifierConfig("S", 4, (16, 8))],
                         ids=["lstm", "cnn"])
def test_checkpoint_truncation(config, tmp_path):
    series, _ = sg.generate(sg.SynthConfig(seed=5, n_instruments=6, n_days=40))
    cal = md.TradingCalendar(tuple(sg.trading_dates(dt.date(2019, 1, 2), 40)))
    rets = np.concatenate([fz.daily_returns(s)[1] for s in series.values()])
    inst = fz.build_windows(series, "S", cal, fz.calibrate_labels(rets))
    train, test = (fz.stack(part) for part in fz.chronological_split(inst))
    long = M.train(M.build_classifier(config, 3), train, test, M.TrainConfig(epochs=50, early_stop_epoch=20, seed=3))
    short = M.train(M.build_classifier(config, 3), train, test, M.TrainConfig(epochs=20, seed=3))
    long.save(tmp_path / "long.npz")
    short.save(tmp_path / "short.npz")
    a, _, _ = nn.load_checkpoint(tmp_path / "long.npz")
    b, _, _ = nn.load_checkpoint(tmp_path / "short.npz")
    assert a.keys() == b.keys()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
