"""LSTM and CNN return-bucket classifiers, their training loop and ablations."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .featurize import N_CLASSES, WINDOW_KINDS, LabelScheme, stack
from .marketdata import N_FEATURES
from .nn import (LSTM, Conv1xF, Dense, DropoutSpec, Optimizer, Tensor, cross_entropy_loss,
                 dropout_forward, gradients, l2_penalty, load_checkpoint, no_grad,
                 one_hot, save_checkpoint, softmax)
from .nn.tensor import pool_time, reshape
from .nn.layers import NonFiniteInput, TemporalConv
from .nn.optim import DEFAULTS as OPTIMIZER_DEFAULTS
from .rng import substream

log = logging.getLogger(__name__)


class InvalidConfig(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class DivergedLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class LstmClassifierConfig:
    window_kind: str = "S"
    hidden_size: int = 64
    keep_probability: float = 0.8
    n_classes: int = N_CLASSES

    def validate(self) -> None:
        if self.window_kind not in ("S", "L"):
            raise InvalidConfig(f"LSTM window must be S or L, not {self.window_kind!r}")
        if self.hidden_size < 1:
            raise InvalidConfig("hidden_size must be at least 1")
        if not 0 < self.keep_probability <= 1:
            raise InvalidConfig("keep_probability must lie in (0, 1]")


@dataclass(frozen=True)
class CnnClassifierConfig:
    window_kind: str = "CNN5D"
    num_kernels: int = 40
    dense_sizes: tuple[int, ...] = (250, 100)
    spatial_columns: int = 3
    dense_keep: float = 0.8
    pooling: str = "none"            # none | max | avg
    second_conv: bool = False
    enable_conv: bool = True
    n_classes: int = N_CLASSES

    @property
    def dense_layer_count(self) -> int:
        return len(self.dense_sizes)

    def validate(self) -> None:
        if self.window_kind not in WINDOW_KINDS:
            raise InvalidConfig(f"unknown window kind {self.window_kind!r}")
        if self.num_kernels < 1 or any(s < 1 for s in self.dense_sizes):
            raise InvalidConfig("layer sizes must be positive")
        if self.pooling not in ("none", "max", "avg"):
            raise InvalidConfig(f"pooling must be none, max or avg, not {self.pooling!r}")
        if not 0 <= self.spatial_columns < N_FEATURES:
            raise InvalidConfig("spatial_columns must lie in [0, 11)")
        if not 0 < self.dense_keep <= 1:
            raise InvalidConfig("dense_keep must lie in (0, 1]")
        if not self.enable_conv and (self.second_conv or self.pooling != "none"):
            raise InvalidConfig("pooling and a second conv need the conv layer")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 30
    epochs: int = 50
    learning_rate: float = 0.001
    optimizer: str = "adam"
    early_stop_epoch: int | None = None
    l2: float = 0.0
    seed: int = 0

    @property
    def checkpoint_epoch(self) -> int:
        return self.epochs if self.early_stop_epoch is None else self.early_stop_epoch

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidConfig("batch_size and epochs must be at least 1")
        if not 1 <= self.checkpoint_epoch <= self.epochs:
            raise InvalidConfig("early_stop_epoch must lie in [1, epochs]")
        if self.l2 < 0:
            raise InvalidConfig("l2 must be non-negative")
        if self.optimizer not in OPTIMIZER_DEFAULTS:
            raise InvalidConfig(f"optimizer must be one of {sorted(OPTIMIZER_DEFAULTS)}, not {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_accuracy: float
    test_accuracy: float
    train_loss: float


class Classifier:
    """Common interface: ``forward`` records a graph, ``predict_proba`` does not."""

    config: LstmClassifierConfig | CnnClassifierConfig
    layers: dict

    @property
    def input_shape(self) -> tuple[int, int]:
        return WINDOW_KINDS[self.config.window_kind][2], N_FEATURES

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for lname, layer in self.layers.items():
            for pname, t in layer.named_parameters().items():
                out[f"{lname}.{pname}"] = t
        return out

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(state):
            raise InvalidConfig("checkpoint tensors do not match the architecture")
        for k, t in params.items():
            if t.shape != state[k].shape:
                raise InvalidConfig(f"{k}: shape {state[k].shape} != {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)

    def descriptor(self) -> dict:
        return {"type": type(self).__name__, "config": dataclasses.asdict(self.config)}

    def _check_input(self, X: np.ndarray) -> None:
        if X.ndim != 3 or X.shape[1:] != self.input_shape:
            raise InvalidConfig(f"expected input (B, {self.input_shape[0]}, {self.input_shape[1]}), "
                                f"got {X.shape}")

    def forward(self, X, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError

    def predict_proba(self, X: np.ndarray, batch: int = 1024) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if len(X) == 0:
            return np.empty((0, self.config.n_classes))
        with no_grad():
            return np.concatenate([self.forward(X[i:i + batch]).data
                                   for i in range(0, len(X), batch)])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)


class LstmClassifier(Classifier):
    """LSTM, dropout on the last hidden state, linear head, softmax."""

    def __init__(self, config: LstmClassifierConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = substream(seed, "init")
        self.layers = {
            "lstm": LSTM(N_FEATURES, config.hidden_size, rng),
            "head": Dense(config.hidden_size, config.n_classes, rng),
        }
        self.dropout = DropoutSpec("elementwise", config.keep_probability)

    def forward(self, X, training=False, rng=None) -> Tensor:
        X = np.asarray(X, dtype=np.float64)
        self._check_input(X)
        h = self.layers["lstm"](Tensor(X))
        h = dropout_forward(h, self.dropout, training, rng)
        return softmax(self.layers["head"](h))


class CnnClassifier(Classifier):
    """1 x F convolution over time rows, flatten, ReLU dense layers, softmax.

    Spatial dropout zeroes whole feature columns of the input while
    training; optional pooling, a second (temporal) convolution, or no
    convolution at all reproduce the framework ablations.
    """

    def __init__(self, config: CnnClassifierConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = substream(seed, "init")
        steps = WINDOW_KINDS[config.window_kind][2]
        self.layers = {}
        width, channels = steps, N_FEATURES
        if config.enable_conv:
            self.layers["conv"] = Conv1xF(N_FEATURES, config.num_kernels, rng)
            channels = config.num_kernels
            if config.second_conv:
                self.layers["conv2"] = TemporalConv(channels, config.num_kernels, rng, width=3)
                width -= 2
            if config.pooling != "none":
                width //= 2
        n_in = width * channels
        for k, size in enumerate(config.dense_sizes):
            self.layers[f"dense{k + 1}"] = Dense(n_in, size, rng, activation="relu")
            n_in = size
        self.layers["head"] = Dense(n_in, config.n_classes, rng)
        self.spatial = DropoutSpec("spatial", columns_dropped=config.spatial_columns)
        self.dense_dropout = DropoutSpec("elementwise", config.dense_keep)

    def forward(self, X, training=False, rng=None) -> Tensor:
        X = np.asarray(X, dtype=np.float64)
        self._check_input(X)
        x = dropout_forward(Tensor(X), self.spatial, training, rng)
        if self.config.enable_conv:
            x = self.layers["conv"](x)
            if self.config.second_conv:
                x = self.layers["conv2"](x)
            if self.config.pooling != "none":
                x = pool_time(x, 2, self.config.pooling)
        x = reshape(x, (x.shape[0], -1))
        for k in range(len(self.config.dense_sizes)):
            x = self.layers[f"dense{k + 1}"](x)
            x = dropout_forward(x, self.dense_dropout, training, rng)
        return softmax(self.layers["head"](x))


def build_classifier(config, seed: int = 0) -> Classifier:
    if isinstance(config, LstmClassifierConfig):
        return LstmClassifier(config, seed)
    if isinstance(config, CnnClassifierConfig):
        return CnnClassifier(config, seed)
    raise InvalidConfig(f"unsupported config {type(config).__name__}")


def config_from_dict(d: dict):
    d = dict(d)
    if "hidden_size" in d:
        return LstmClassifierConfig(**d)
    d["dense_sizes"] = tuple(d.get("dense_sizes", (250, 100)))
    return CnnClassifierConfig(**d)


def cnn_parameter_count(config: CnnClassifierConfig) -> int:
    """Closed-form parameter count of the default (conv, no pooling, no second conv) layout."""
    steps = WINDOW_KINDS[config.window_kind][2]
    n = config.num_kernels * (N_FEATURES + 1)
    n_in = steps * config.num_kernels
    for size in config.dense_sizes:
        n += n_in * size + size
        n_in = size
    return n + n_in * config.n_classes + config.n_classes


# datasets ---------------------------------------------------------------------

def as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        X, y = data
        return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)
    return stack(list(data))


def dataset_hash(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(y, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


# training -----------------------------------------------------------------------

@dataclass
class TrainedModel:
    model: Classifier
    train_config: TrainConfig
    log: list[EpochMetrics] = field(default_factory=list)
    scheme: LabelScheme | None = None
    checkpoint_epoch: int = 0
    model_id: str = ""

    def save(self, path: str | Path) -> None:
        meta = {
            "architecture": self.model.descriptor(),
            "train_config": dataclasses.asdict(self.train_config),
            "checkpoint_epoch": self.checkpoint_epoch,
            "model_id": self.model_id,
            "log": [dataclasses.asdict(m) for m in self.log],
            "label_scheme": None if self.scheme is None else self.scheme.dumps(),
        }
        save_checkpoint(path, self.model.state_dict(), self.train_config.seed, meta)

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        tensors, seed, meta = load_checkpoint(path)
        config = config_from_dict(meta["architecture"]["config"])
        model = build_classifier(config, seed)
        model.load_state_dict(tensors)
        scheme = meta.get("label_scheme")
        return cls(model, TrainConfig(**meta["train_config"]),
                   [EpochMetrics(**m) for m in meta["log"]],
                   LabelScheme.loads(scheme) if scheme else None,
                   meta["checkpoint_epoch"], meta.get("model_id", ""))

    def write_log(self, path: str | Path) -> None:
        write_training_log(self.log, path)


def write_training_log(rows: Sequence[EpochMetrics], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_acc", "test_acc", "train_loss"])
        for m in rows:
            w.writerow([m.epoch, repr(m.train_accuracy), repr(m.test_accuracy), repr(m.train_loss)])


def train(model: Classifier, train_set, test_set, cfg: TrainConfig,
          scheme: LabelScheme | None = None, model_id: str = "") -> TrainedModel:
    """Mini-batch training with per-epoch seeded shuffling.

    The returned model holds the parameters as they were at the end of
    ``cfg.checkpoint_epoch``, whatever number of epochs ran after it.
    """
    cfg.validate()
    X, y = as_arrays(train_set)
    Xt, yt = as_arrays(test_set) if test_set is not None else (None, None)
    if len(X) == 0:
        raise EmptyDataset("training set is empty")
    if np.any((y < 0) | (y >= model.config.n_classes)):
        raise InvalidConfig("training labels out of range")
    params = list(model.parameters().values())
    opt = Optimizer(params, cfg.optimizer, cfg.learning_rate)
    shuffle_rng = substream(cfg.seed, "shuffle")
    dropout_rng = substream(cfg.seed, "dropout")
    Y = one_hot(y, model.config.n_classes)
    history: list[EpochMetrics] = []
    snapshot = None
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(X))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                probs = model.forward(X[idx], training=True, rng=dropout_rng)
            except NonFiniteInput:
                raise DivergedLoss(f"non-finite activations at epoch {epoch}") from None
            loss = cross_entropy_loss(probs, Y[idx])
            if cfg.l2 > 0:
                loss = loss + l2_penalty(params, cfg.l2)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            opt.step(gradients(loss, params))
            loss_sum += value * len(idx)
            correct += int((probs.data.argmax(axis=1) == y[idx]).sum())
        test_acc = float("nan")
        if Xt is not None and len(Xt):
            test_acc = accuracy(yt, model.predict(Xt))
        history.append(EpochMetrics(epoch, correct / len(X), test_acc, loss_sum / len(X)))
        log.debug("epoch %d train_acc %.4f test_acc %.4f loss %.5f", epoch,
                  history[-1].train_accuracy, test_acc, history[-1].train_loss)
        if epoch == cfg.checkpoint_epoch:
            snapshot = model.state_dict()
    model.load_state_dict(snapshot)
    return TrainedModel(model, cfg, history, scheme, cfg.checkpoint_epoch, model_id)


# evaluation ---------------------------------------------------------------------

def accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    return float(np.mean(np.asarray(y_true) == np.asarray(y_pred)))


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """``m[r, c]`` counts instances of true class ``r`` predicted as ``c``."""
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return m


def evaluate(model, dataset) -> tuple[float, np.ndarray]:
    """Accuracy and 4 x 4 confusion matrix of ``model`` on ``dataset``.

    ``model`` may be a :class:`Classifier`, a :class:`TrainedModel`, or any
    object with ``predict_proba``.
    """
    if isinstance(model, TrainedModel):
        model = model.model
    X, y = as_arrays(dataset)
    if len(X) == 0:
        raise EmptyDataset("evaluation set is empty")
    pred = np.asarray(model.predict_proba(X)).argmax(axis=1)
    m = confusion_matrix(y, pred)
    return float(np.trace(m) / m.sum()), m


def normalize_confusion(matrix, axis: str = "row") -> np.ndarray:
    """Scale rows (or columns) to sum to one; all-zero lines stay zero."""
    m = np.asarray(matrix, dtype=np.float64)
    ax = {"row": 1, "column": 0}[axis]
    totals = m.sum(axis=ax, keepdims=True)
    return np.divide(m, totals, out=np.zeros_like(m), where=totals != 0)


def write_matrix(matrix, path: str | Path, labels: Sequence[str] | None = None) -> None:
    from .featurize import CLASS_NAMES
    labels = labels or CLASS_NAMES
    m = np.asarray(matrix)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *labels])
        for name, row in zip(labels, m):
            w.writerow([name, *(repr(v.item()) if m.dtype.kind == "f" else str(v) for v in row)])


# ablations ----------------------------------------------------------------------

@dataclass(frozen=True)
class Variant:
    name: str
    model: LstmClassifierConfig | CnnClassifierConfig
    train: TrainConfig


@dataclass
class AblationRow:
    name: str
    window_kind: str
    test_accuracy: float
    train_accuracy: float
    checkpoint_epoch: int
    seed: int
    dataset_hash: str
    trained: TrainedModel = field(repr=False, default=None)


def run_ablation_suite(variants: Sequence[Variant], datasets: dict) -> list[AblationRow]:
    """Train every variant under its own config and rank by checkpoint test accuracy.

    ``datasets`` maps a window kind to ``(train, test)``; each variant uses
    the pair matching its model's window kind.
    """
    rows = []
    for v in variants:
        train_set, test_set = datasets[v.model.window_kind]
        Xtr, ytr = as_arrays(train_set)
        Xte, yte = as_arrays(test_set)
        model = build_classifier(v.model, v.train.seed)
        tm = train(model, (Xtr, ytr), (Xte, yte), v.train, model_id=v.name)
        acc, _ = evaluate(tm, (Xte, yte))
        ck = tm.log[tm.checkpoint_epoch - 1]
        rows.append(AblationRow(v.name, v.model.window_kind, acc, ck.train_accuracy,
                                tm.checkpoint_epoch, v.train.seed,
                                dataset_hash(np.concatenate([Xtr.ravel(), Xte.ravel()]),
                                             np.concatenate([ytr, yte])), tm))
    return sorted(rows, key=lambda r: (-r.test_accuracy, r.name))


def write_ablation_table(rows: Sequence[AblationRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "variant", "window_kind", "test_acc", "train_acc",
                    "checkpoint_epoch", "seed", "dataset_hash"])
        for rank, r in enumerate(rows, 1):
            w.writerow([rank, r.name, r.window_kind, repr(r.test_accuracy), repr(r.train_accuracy),
                        r.checkpoint_epoch, r.seed, r.dataset_hash])


SUITES = ("optimizers", "regularization", "keep_prob", "cnn_framework", "dnn_vs_cnn", "window_span")


class UnknownSuite(KeyError):
    pass


def suite_variants(suite: str, lstm: LstmClassifierConfig, cnn: CnnClassifierConfig,
                   cfg: TrainConfig) -> list[Variant]:
    """The enumerated comparison grids, each varying one factor of the base configs."""
    rep = dataclasses.replace
    if suite == "optimizers":
        return [Variant(k, lstm, rep(cfg, optimizer=k)) for k in ("adam", "rmsprop", "adadelta")]
    if suite == "regularization":
        out = [Variant(f"dropout_keep_{lstm.keep_probability}", lstm, rep(cfg, l2=0.0))]
        no_drop = rep(lstm, keep_probability=1.0)
        out += [Variant(f"l2_lambda_{lam}", no_drop, rep(cfg, l2=lam)) for lam in (0.1, 1.0, 10.0)]
        return out
    if suite == "keep_prob":
        return [Variant(f"keep_{k}", rep(lstm, keep_probability=k), cfg) for k in (0.7, 0.8, 0.9)]
    if suite == "cnn_framework":
        return [
            Variant("final", cnn, cfg),
            Variant("max_pooling", rep(cnn, pooling="max"), cfg),
            Variant("avg_pooling", rep(cnn, pooling="avg"), cfg),
            Variant("second_conv", rep(cnn, second_conv=True), cfg),
            Variant("dense_1", rep(cnn, dense_sizes=cnn.dense_sizes[:1]), cfg),
            Variant("dense_3", rep(cnn, dense_sizes=tuple(cnn.dense_sizes) + (50,)), cfg),
        ]
    if suite == "dnn_vs_cnn":
        return [Variant("cnn", cnn, cfg), Variant("dnn", rep(cnn, enable_conv=False), cfg)]
    if suite == "window_span":
        return [Variant("1_day", rep(cnn, window_kind="S"), cfg),
                Variant("5_day", rep(cnn, window_kind="CNN5D"), cfg)]
    raise UnknownSuite(suite)
