"""Run configuration: an INI file with sections, every key defaulted."""
from __future__ import annotations

import configparser
import datetime as dt
import io
from dataclasses import dataclass
from pathlib import Path

from .backtest import FeeSchedule, SelectionRule
from .models import CnnClassifierConfig, InvalidConfig, LstmClassifierConfig, TrainConfig
from .synthgen import SynthConfig

DEFAULTS = """\
[run]
seed = 0
out = out
strategy = lstm

[data]
bars = bars_15min.csv
truth = truth.csv
universe =

[synth]
n_instruments = 50
n_days = 300
signal_strength = 0.8
volatility = 0.02
price_scale = 10.0
start_date = 2019-01-02

[split]
train_fraction = 0.8
train_start =
train_end =
test_start =
test_end =
backtest_start =
backtest_end =

[lstm]
hidden_size = 64
keep_probability = 0.8

[cnn]
num_kernels = 40
dense_sizes = 250,100
spatial_columns = 3
dense_keep = 0.8
pooling = none
second_conv = false
enable_conv = true

[train]
batch_size = 30
epochs = 50
learning_rate = 0.001
optimizer = adam
early_stop_epoch = 20
l2 = 0.0

[backtest]
max_positions = 20
threshold = 0.0014
fee_rate = 0.001
"""

STRATEGIES = ("lstm", "cnn", "both")


class ConfigError(ValueError):
    pass


def _date(s: str) -> dt.date | None:
    s = s.strip()
    if not s:
        return None
    try:
        return dt.date.fromisoformat(s)
    except ValueError:
        raise ConfigError(f"bad date {s!r}") from None


@dataclass
class RunConfig:
    parser: configparser.ConfigParser
    source: Path | None = None

    @classmethod
    def load(cls, path: str | Path | None = None, seed: int | None = None,
             out: str | Path | None = None) -> "RunConfig":
        p = configparser.ConfigParser(interpolation=None)
        p.read_string(DEFAULTS)
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file {path} does not exist")
            try:
                p.read(path)
            except configparser.Error as exc:
                raise ConfigError(str(exc)) from None
        if seed is not None:
            p["run"]["seed"] = str(seed)
        if out is not None:
            p["run"]["out"] = str(out)
        cfg = cls(p, path)
        cfg.validate()
        return cfg

    def dumps(self) -> str:
        buf = io.StringIO()
        self.parser.write(buf)
        return buf.getvalue()

    def _get(self, section: str, key: str, conv=str):
        raw = self.parser.get(section, key, fallback="")
        try:
            if conv is bool:
                return self.parser.getboolean(section, key)
            return conv(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {conv.__name__}") from None

    # sections -------------------------------------------------------------------

    @property
    def seed(self) -> int:
        return self._get("run", "seed", int)

    @property
    def out_dir(self) -> Path:
        return Path(self._get("run", "out"))

    @property
    def strategies(self) -> list[str]:
        s = self._get("run", "strategy").strip().lower()
        if s not in STRATEGIES:
            raise ConfigError(f"[run] strategy must be one of {STRATEGIES}, not {s!r}")
        return ["lstm", "cnn"] if s == "both" else [s]

    def path(self, key: str) -> Path | None:
        raw = self._get("data", key).strip()
        if not raw:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.out_dir / p

    def synth(self) -> SynthConfig:
        g = lambda k, c=float: self._get("synth", k, c)
        return SynthConfig(self.seed, g("n_instruments", int), g("n_days", int),
                           g("signal_strength"), g("volatility"), g("price_scale"),
                           _date(g("start_date", str)) or dt.date(2019, 1, 2))

    def lstm(self, window_kind: str = "S") -> LstmClassifierConfig:
        return LstmClassifierConfig(window_kind, self._get("lstm", "hidden_size", int),
                                    self._get("lstm", "keep_probability", float))

    def cnn(self) -> CnnClassifierConfig:
        g = lambda k, c=str: self._get("cnn", k, c)
        try:
            sizes = tuple(int(x) for x in g("dense_sizes").split(",") if x.strip())
        except ValueError:
            raise ConfigError("[cnn] dense_sizes must be comma-separated integers") from None
        return CnnClassifierConfig("CNN5D", g("num_kernels", int), sizes, g("spatial_columns", int),
                                   g("dense_keep", float), g("pooling").strip(),
                                   g("second_conv", bool), g("enable_conv", bool))

    def train(self) -> TrainConfig:
        g = lambda k, c=int: self._get("train", k, c)
        early = self._get("train", "early_stop_epoch").strip()
        return TrainConfig(g("batch_size"), g("epochs"), g("learning_rate", float),
                           g("optimizer", str).strip().lower(),
                           int(early) if early else None, g("l2", float), self.seed)

    def rule(self) -> SelectionRule:
        return SelectionRule(self._get("backtest", "max_positions", int),
                             self._get("backtest", "threshold", float))

    def fees(self) -> FeeSchedule:
        return FeeSchedule(self._get("backtest", "fee_rate", float))

    def split(self) -> dict[str, dt.date | None]:
        keys = ("train_start", "train_end", "test_start", "test_end", "backtest_start", "backtest_end")
        return {k: _date(self._get("split", k)) for k in keys}

    @property
    def train_fraction(self) -> float:
        return self._get("split", "train_fraction", float)

    def validate(self) -> None:
        """Type-check every key and the ordering of configured date ranges."""
        self.strategies
        try:
            self.lstm().validate()
            self.cnn().validate()
            self.train().validate()
            self.rule()
            self.fees()
        except (InvalidConfig, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if not 0 < self.train_fraction < 1:
            raise ConfigError("[split] train_fraction must lie in (0, 1)")
        s = self.split()
        for a, b in (("train_start", "train_end"), ("test_start", "test_end"),
                     ("backtest_start", "backtest_end"), ("train_end", "test_start")):
            if s[a] and s[b] and not s[a] <= s[b]:
                raise ConfigError(f"[split] {a} must not follow {b}")
        if s["train_end"] and s["test_start"] and s["train_end"] == s["test_start"]:
            raise ConfigError("[split] train and test ranges overlap")
        universe = self.path("universe")
        if universe is not None and not universe.exists():
            raise ConfigError(f"[data] universe file {universe} does not exist")
