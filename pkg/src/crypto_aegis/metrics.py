"""Confusion matrices, rate metrics, ROC/AUC and detection latency."""

from __future__ import annotations

import io
from dataclasses import dataclass
from decimal import Decimal
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """k x k counts, rows = actual class, columns = predicted class.

    ``tp``/``tn``/``fp``/``fn`` are the one-vs-rest collapse for ``positive``.
    """
    classes: tuple[str, ...]
    matrix: np.ndarray
    positive: str

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.int64)
        k = len(self.classes)
        if m.shape != (k, k):
            raise ValueError(f"matrix must be {k}x{k}")
        if np.any(m < 0):
            raise ValueError("counts must be non-negative")
        if self.positive not in self.classes:
            raise ValueError(f"positive class {self.positive!r} not in classes")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "classes", tuple(self.classes))

    @classmethod
    def from_counts(cls, tp: int, tn: int, fp: int, fn: int,
                    positive: str = "positive", negative: str = "negative") -> "ConfusionMatrix":
        return cls((positive, negative), np.array([[tp, fn], [fp, tn]]), positive)

    @property
    def _p(self) -> int:
        return self.classes.index(self.positive)

    @property
    def tp(self) -> int:
        return int(self.matrix[self._p, self._p])

    @property
    def fn(self) -> int:
        return int(self.matrix[self._p].sum() - self.tp)

    @property
    def fp(self) -> int:
        return int(self.matrix[:, self._p].sum() - self.tp)

    @property
    def tn(self) -> int:
        return int(self.matrix.sum()) - self.tp - self.fn - self.fp

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def for_class(self, name: str) -> "ConfusionMatrix":
        return ConfusionMatrix(self.classes, self.matrix, name)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.classes != self.classes:
            raise ValueError("cannot add confusion matrices over different classes")
        return ConfusionMatrix(self.classes, self.matrix + other.matrix, self.positive)

    def as_dict(self) -> dict:
        return {"classes": list(self.classes), "matrix": self.matrix.tolist(),
                "positive": self.positive, "tp": self.tp, "tn": self.tn,
                "fp": self.fp, "fn": self.fn}


def confusion(predicted: Sequence, actual: Sequence, positive,
              classes: Sequence | None = None) -> ConfusionMatrix:
    predicted = list(predicted)
    actual = list(actual)
    if len(predicted) != len(actual):
        raise ValueError(f"length mismatch: {len(predicted)} predicted, {len(actual)} actual")
    if classes is None:
        classes = sorted(set(actual) | set(predicted) | {positive}, key=str)
    index = {c: i for i, c in enumerate(classes)}
    m = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, a in zip(predicted, actual):
        m[index[a], index[p]] += 1
    return ConfusionMatrix(tuple(str(c) for c in classes), m, str(positive))


@dataclass(frozen=True)
class Rates:
    tpr: float
    fpr: float
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()  # metrics whose denominator was zero

    def as_dict(self) -> dict:
        return {"tpr": self.tpr, "fpr": self.fpr, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "degenerate": list(self.degenerate)}


def rates(cm: ConfusionMatrix) -> Rates:
    """TPR, FPR, precision, recall, F1; a zero denominator yields 0 and a flag."""
    degenerate = []

    def ratio(name, num, den):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    tpr = ratio("tpr", cm.tp, cm.tp + cm.fn)
    fpr = ratio("fpr", cm.fp, cm.fp + cm.tn)
    precision = ratio("precision", cm.tp, cm.tp + cm.fp)
    recall = tpr
    if "tpr" in degenerate:
        degenerate.append("recall")
    if precision + recall == 0:
        degenerate.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Rates(tpr, fpr, precision, recall, f1, tuple(degenerate))


def one_vs_rest(cm: ConfusionMatrix) -> dict[str, Rates]:
    return {c: rates(cm.for_class(c)) for c in cm.classes}


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("fpr,tpr\n")
        for f, t in zip(self.fpr.tolist(), self.tpr.tolist()):
            buf.write(f"{f!r},{t!r}\n")
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {"fpr": self.fpr.tolist(), "tpr": self.tpr.tolist(),
                "thresholds": self.thresholds.tolist()}


def roc(scores, actual, positive=True) -> RocCurve:
    """Sweep ``score >= t`` over every distinct score plus one sentinel on each side.

    ``actual`` holds labels; rows equal to ``positive`` are the positive class.
    Consecutive thresholds giving the same point are merged (the highest
    threshold is kept).
    """
    scores = np.asarray(scores, dtype=float)
    is_pos = np.asarray(actual) == positive
    if scores.shape != is_pos.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(is_pos.sum())
    n_neg = is_pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative rows")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos_cum = np.cumsum(is_pos[order])
    neg_cum = np.cumsum(~is_pos[order])
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    thresholds = np.r_[s[0] + 1.0, s[ends], s[-1] - 1.0]
    tpr = np.r_[0.0, pos_cum[ends] / n_pos, 1.0]
    fpr = np.r_[0.0, neg_cum[ends] / n_neg, 1.0]
    keep = np.r_[True, (np.diff(fpr) != 0) | (np.diff(tpr) != 0)]
    return RocCurve(fpr[keep], tpr[keep], thresholds[keep])


def auc(curve: RocCurve) -> float:
    x, y = curve.fpr, curve.tpr
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def latency_estimate(median_dt: float, w: int) -> float:
    """Time to fill one causal window of ``w`` packets at the median rate.

    Multiplied in decimal on the value's shortest repr, so table values such
    as 13.97 s give 69.85 s rather than 69.85000000000001.
    """
    if not median_dt > 0:
        raise ValueError("median_dt must be > 0")
    if w < 1:
        raise ValueError("w must be >= 1")
    return float(Decimal(repr(float(median_dt))) * w)


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    rates: Rates
    roc: RocCurve | None = None
    auc: float | None = None

    @classmethod
    def build(cls, cm: ConfusionMatrix, scores=None, actual=None,
              positive=None) -> "EvalReport":
        """Rates from ``cm``; ROC and AUC too when per-row ``scores`` are given."""
        curve = area = None
        if scores is not None:
            curve = roc(scores, actual, cm.positive if positive is None else positive)
            area = auc(curve)
        return cls(cm, rates(cm), curve, area)

    def as_dict(self) -> dict:
        d = {"confusion": self.confusion.as_dict(), **self.rates.as_dict(), "auc": self.auc}
        d["roc"] = None if self.roc is None else self.roc.as_dict()
        return d


# Confusion counts published alongside stated rates. Stated values are kept
# verbatim; where they disagree with the counts, reports show both.
PUBLISHED_CONFUSIONS = {
    "baseline-bitcoin-vs-office": {
        "counts": {"tn": 4321, "fp": 254, "fn": 261, "tp": 4314},
        "stated": {"tpr": 0.941, "fpr": 0.059},
    },
    "sponge-ingoing": {
        "counts": {"tn": 288452, "fp": 10255, "fn": 7979, "tp": 290728},
        "stated": {"f1": 0.96},
    },
    "sponge-outgoing": {
        "counts": {"tn": 275969, "fp": 9370, "fn": 9152, "tp": 276187},
        "stated": {"f1": 0.96},
    },
}


def match_published(cm: ConfusionMatrix) -> tuple[str, dict] | None:
    counts = {"tn": cm.tn, "fp": cm.fp, "fn": cm.fn, "tp": cm.tp}
    for name, entry in PUBLISHED_CONFUSIONS.items():
        if entry["counts"] == counts:
            return name, entry["stated"]
    return None
