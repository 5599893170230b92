"""Expected-return scores from class probabilities, and candidate ranking."""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .featurize import LabelScheme


class InconsistentKeys(ValueError):
    pass


class DuplicateInstrument(ValueError):
    pass


@dataclass(frozen=True)
class ClassProbabilities:
    instrument_id: str
    as_of_date: dt.date
    probs: tuple[float, ...]
    model_id: str = ""

    def __post_init__(self):
        p = np.asarray(self.probs)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a probability vector: {self.probs}")


@dataclass(frozen=True)
class ExpectedReturnScore:
    instrument_id: str
    as_of_date: dt.date
    expected: float
    model_ids: tuple[str, ...] = ()


def expected_return(prob_sets: Sequence[ClassProbabilities], scheme: LabelScheme) -> ExpectedReturnScore:
    """Mean over models of ``sum_k p_k * w_k`` with ``w_k`` the class mean returns."""
    if not prob_sets:
        raise ValueError("need at least one model's probabilities")
    keys = {(p.instrument_id, p.as_of_date) for p in prob_sets}
    if len(keys) != 1:
        raise InconsistentKeys(f"probabilities mix instruments/dates: {sorted(keys)}")
    w = np.asarray(scheme.class_means)
    e = float(np.mean([np.dot(p.probs, w) for p in prob_sets]))
    first = prob_sets[0]
    return ExpectedReturnScore(first.instrument_id, first.as_of_date, e,
                               tuple(p.model_id for p in prob_sets))


def expected_returns(prob_arrays: Sequence[np.ndarray], class_means) -> np.ndarray:
    """Vectorized form: ``prob_arrays`` holds one (n, 4) array per model."""
    P = np.stack([np.asarray(p, dtype=np.float64) for p in prob_arrays])
    return (P @ np.asarray(class_means, dtype=np.float64)).mean(axis=0)


def rank_candidates(scores: Iterable[ExpectedReturnScore]) -> list[ExpectedReturnScore]:
    """Descending by expected return; ties go to the lexicographically smaller ticker."""
    scores = list(scores)
    seen = set()
    for s in scores:
        key = (s.as_of_date, s.instrument_id)
        if key in seen:
            raise DuplicateInstrument(f"{s.instrument_id} scored twice on {s.as_of_date}")
        seen.add(key)
    return sorted(scores, key=lambda s: (-s.expected, s.instrument_id))


def write_scores(scores: Iterable[ExpectedReturnScore], path: str | Path) -> None:
    """CSV ``date,instrument,E,model_ids``, sorted by date then rank."""
    by_date: dict = {}
    for s in scores:
        by_date.setdefault(s.as_of_date, []).append(s)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "instrument", "E", "model_ids"])
        for d in sorted(by_date):
            for s in rank_candidates(by_date[d]):
                w.writerow([d.isoformat(), s.instrument_id, repr(s.expected), ";".join(s.model_ids)])


def read_scores(path: str | Path) -> list[ExpectedReturnScore]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            ids = tuple(filter(None, row["model_ids"].split(";")))
            out.append(ExpectedReturnScore(row["instrument"], dt.date.fromisoformat(row["date"]),
                                           float(row["E"]), ids))
    return out
