"""End-to-end runs: load traces, featurize per flow, cross-validate, detect.

Ingoing and outgoing traffic are always handled as two separate problems,
each with its own dataset, model and report.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataset as dsmod
from .dataset import LabeledDataset, assemble, binary_relabel, kfold
from .features import FEATURE_NAMES, WindowConfig, featurize
from .forest import RandomForest, TrainConfig, permutation_importance, train
from .metrics import ConfusionMatrix, EvalReport, auc, one_vs_rest, roc
from .seeding import derive_seed
from .trace import (
    Direction,
    DirectionalTrace,
    PacketRecord,
    TraceFormatError,
    TraceLabel,
    parse_canonical_csv,
    parse_pcap,
    split_directions,
)

log = logging.getLogger(__name__)

REPORT_VERSION = 1

# stream ids for derive_seed(seed, stream, ...)
_FOLDS, _FOLD_TRAIN, _IMPORTANCE, _FULL_TRAIN = 1, 2, 3, 4


@dataclass(frozen=True)
class RunConfig:
    window_w: int = 5
    n_trees: int = 20
    k_folds: int = 10
    seed: int = 0
    per_class_rows: int | str | None = "min"  # int, "min" (balance) or None (all rows)
    positive_classes: tuple[str, ...] = ()
    m_try: int | None = None

    def __post_init__(self):
        WindowConfig(self.window_w)
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        TrainConfig(n_trees=self.n_trees, m_try=self.m_try, seed=self.seed)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(n_trees=self.n_trees, m_try=self.m_try, seed=seed)

    def as_dict(self) -> dict:
        return {"window": self.window_w, "trees": self.n_trees, "folds": self.k_folds,
                "seed": self.seed, "per_class_rows": self.per_class_rows,
                "positive": list(self.positive_classes), "m_try": self.m_try}


@dataclass(frozen=True)
class LabeledInput:
    label: str
    path: Path

    @classmethod
    def parse(cls, text: str) -> "LabeledInput":
        label, sep, path = text.partition("=")
        if not sep or not label or not path:
            raise ValueError(f"expected LABEL=PATH, got {text!r}")
        return cls(label, Path(path))


# --------------------------------------------------------------------------
# Loading
# --------------------------------------------------------------------------

def load_packets(path: Path, local_subnet: str | None = None) -> list[PacketRecord]:
    """Read a canonical CSV or a classic pcap (sniffed from its first bytes)."""
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(b"t_rel_s"):
        return parse_canonical_csv(data.decode("utf-8"))
    if path.suffix.lower() == ".csv":
        raise TraceFormatError(f"{path}: line 1: expected canonical CSV header")
    if local_subnet is None:
        raise ValueError(f"{path}: --local-subnet is required for pcap input")
    records, stats = parse_pcap(data, local_subnet)
    if stats.skipped:
        log.info("%s: skipped %d of %d frames %s", path, stats.skipped, stats.frames,
                 stats.skipped_reasons)
    return records


def load_flows(inputs: Sequence[LabeledInput], local_subnet: str | None = None
               ) -> dict[Direction, list[DirectionalTrace]]:
    flows: dict[Direction, list[DirectionalTrace]] = {d: [] for d in Direction}
    for item in inputs:
        packets = load_packets(item.path, local_subnet)
        ingoing, outgoing = split_directions(packets, TraceLabel(item.label))
        flows[Direction.INGOING].append(ingoing)
        flows[Direction.OUTGOING].append(outgoing)
    return flows


def build_dataset(traces: Sequence[DirectionalTrace], w: int,
                  per_class_rows: int | str | None) -> LabeledDataset:
    usable = [t for t in traces if len(t) >= 2]
    for t in traces:
        if len(t) < 2:
            log.warning("%s %s: fewer than 2 packets, ignored", t.label.application,
                        t.direction.value)
    parts = [featurize(t, WindowConfig(w)) for t in usable]
    if per_class_rows == "min":
        per_class = {}
        for fm in parts:
            per_class[fm.source_label.application] = (
                per_class.get(fm.source_label.application, 0) + len(fm))
        per_class_rows = min(per_class.values()) if per_class else None
    elif per_class_rows == "all":
        per_class_rows = None
    return assemble(parts, per_class_rows)


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------

@dataclass
class CrossValResult:
    dataset: LabeledDataset
    confusion: ConfusionMatrix           # aggregated over folds
    scores: np.ndarray                   # (n_rows, n_classes) held-out vote fractions
    predicted: np.ndarray
    fold_sizes: list[int] = field(default_factory=list)


def cross_validate(ds: LabeledDataset, k: int, n_trees: int, seed: int,
                   m_try: int | None = None) -> CrossValResult:
    """k-fold CV; every row is scored once, by the forest that did not see it."""
    if np.unique(ds.labels).size < 2:
        raise dsmod.InsufficientRowsError("cross-validation needs at least two classes")
    part = kfold(ds, k, derive_seed(seed, _FOLDS))
    scores = np.zeros((len(ds), ds.n_classes))
    for f, (train_idx, test_idx) in enumerate(part.splits()):
        cfg = TrainConfig(n_trees=n_trees, m_try=m_try, seed=derive_seed(seed, _FOLD_TRAIN, f))
        model = train(ds.subset(train_idx), cfg)
        scores[test_idx] = model.predict_scores(ds.samples[test_idx])
    predicted = np.argmax(scores, axis=1)
    k_cls = ds.n_classes
    matrix = np.zeros((k_cls, k_cls), dtype=np.int64)
    np.add.at(matrix, (ds.labels, predicted), 1)
    cm = ConfusionMatrix(ds.class_names, matrix, ds.class_names[0])
    return CrossValResult(ds, cm, scores, predicted, part.fold_sizes().tolist())


def per_class_report(res: CrossValResult) -> dict[str, dict]:
    out = {}
    for c, (name, r) in enumerate(one_vs_rest(res.confusion).items()):
        entry = {"tpr": r.tpr, "fpr": r.fpr, "precision": r.precision,
                 "recall": r.recall, "f1": r.f1, "auc": None}
        if 0 < np.count_nonzero(res.dataset.labels == c) < len(res.dataset):
            entry["auc"] = auc(roc(res.scores[:, c], res.dataset.labels, c))
        out[name] = entry
    return out


def binary_report(res: CrossValResult, positive: str) -> EvalReport:
    c = res.dataset.class_names.index(positive)
    cm = res.confusion.for_class(positive)
    return EvalReport.build(cm, res.scores[:, c], res.dataset.labels == c, True)


def importance_sweep(traces: Sequence[DirectionalTrace], windows: Sequence[int],
                     cfg: RunConfig) -> dict[int, dict]:
    """Permutation importance of a forest trained on all rows, per window length."""
    out = {}
    for w in windows:
        ds = build_dataset(traces, w, cfg.per_class_rows)
        if cfg.positive_classes:
            ds = binary_relabel(ds, cfg.positive_classes)
        model = train(ds, cfg.train_config(derive_seed(cfg.seed, _FULL_TRAIN, w)))
        rep = permutation_importance(model, ds, derive_seed(cfg.seed, _IMPORTANCE, w))
        out[w] = rep.as_dict()
    return out


def cv_flow_report(traces: Sequence[DirectionalTrace], cfg: RunConfig,
                   sweep: Sequence[int] = ()) -> tuple[dict, CrossValResult]:
    ds = build_dataset(traces, cfg.window_w, cfg.per_class_rows)
    res = cross_validate(ds, cfg.k_folds, cfg.n_trees, cfg.seed, cfg.m_try)
    per_class = per_class_report(res)
    aucs = [v["auc"] for v in per_class.values() if v["auc"] is not None]
    report = {
        "classes": list(ds.class_names),
        "rows_per_class": ds.class_counts(),
        "n_rows": len(ds),
        "fold_sizes": res.fold_sizes,
        "confusion": {"classes": list(ds.class_names), "matrix": res.confusion.matrix.tolist()},
        "per_class": per_class,
        "auc": float(np.mean(aucs)) if aucs else None,
        "binary": None,
    }
    if cfg.positive_classes:
        bres = _as_binary(res, cfg.positive_classes)
        report["binary"] = binary_report(bres, dsmod.CRYPTO).as_dict()
    if sweep:
        report["importance_sweep"] = {str(w): v for w, v in
                                      importance_sweep(traces, sweep, cfg).items()}
    return report, res


def _as_binary(res: CrossValResult, positive: Sequence[str]) -> CrossValResult:
    """Collapse multiclass held-out scores into Crypto-vs-Standard scores."""
    bds = binary_relabel(res.dataset, positive)
    is_pos = np.array([n in set(positive) for n in res.dataset.class_names])
    crypto = res.scores[:, is_pos].sum(axis=1)
    scores = np.column_stack([crypto, 1.0 - crypto])
    predicted = np.where(is_pos[res.predicted], 0, 1)
    matrix = np.zeros((2, 2), dtype=np.int64)
    np.add.at(matrix, (bds.labels, predicted), 1)
    cm = ConfusionMatrix(bds.class_names, matrix, dsmod.CRYPTO)
    return CrossValResult(bds, cm, scores, predicted, res.fold_sizes)


def run_cv(inputs: Sequence[LabeledInput], cfg: RunConfig, local_subnet: str | None = None,
           sweep: Sequence[int] = ()) -> tuple[dict, dict[str, CrossValResult]]:
    flows = load_flows(inputs, local_subnet)
    report = {"kind": "cv", "version": REPORT_VERSION, "config": cfg.as_dict(),
              "folds": cfg.k_folds,
              "inputs": [{"label": i.label, "path": str(i.path)} for i in inputs],
              "flows": {}}
    results = {}
    for direction, traces in flows.items():
        labels = {t.label.application for t in traces if len(t) >= 2}
        if len(labels) < 2:
            log.info("flow %s: fewer than two classes with data, skipped", direction.value)
            continue
        report["flows"][direction.value], results[direction.value] = cv_flow_report(
            traces, cfg, sweep)
    if not report["flows"]:
        raise dsmod.InsufficientRowsError("no flow has at least two classes with data")
    return report, results


# --------------------------------------------------------------------------
# Detection
# --------------------------------------------------------------------------

def train_flow_model(traces: Sequence[DirectionalTrace], cfg: RunConfig,
                     direction: Direction) -> RandomForest:
    ds = build_dataset(traces, cfg.window_w, cfg.per_class_rows)
    if cfg.positive_classes:
        ds = binary_relabel(ds, cfg.positive_classes)
    model = train(ds, cfg.train_config(derive_seed(cfg.seed, _FULL_TRAIN)))
    model.meta.update({"direction": direction.value, "window": cfg.window_w,
                       "feature_names": list(FEATURE_NAMES),
                       "positive": list(cfg.positive_classes)})
    return model


def alert_summary(model: RandomForest, target: DirectionalTrace, w: int,
                  positive: Sequence[str]) -> dict:
    """Fraction of the target's feature rows classified into ``positive`` classes."""
    if len(target) < 2:
        return {"rows": 0, "alerts": 0, "alert_fraction": None}
    rows = featurize(target, WindowConfig(w)).rows
    pred = model.predict(rows)
    pos_idx = [model.class_names.index(p) for p in positive]
    alerts = int(np.isin(pred, pos_idx).sum())
    return {"rows": int(rows.shape[0]), "alerts": alerts,
            "alert_fraction": alerts / rows.shape[0]}


def model_positive_classes(model: RandomForest, requested: Sequence[str]) -> tuple[str, ...]:
    if requested:
        missing = set(requested) - set(model.class_names)
        if missing:
            raise ValueError(f"positive classes not in model: {sorted(missing)}")
        return tuple(requested)
    if dsmod.CRYPTO in model.class_names:
        return (dsmod.CRYPTO,)
    raise ValueError("model is not binary; give --positive")


def run_detect(inputs: Sequence[LabeledInput], cfg: RunConfig,
               target: Path | None = None, local_subnet: str | None = None) -> dict:
    if not cfg.positive_classes:
        raise ValueError("detection needs at least one --positive class")
    flows = load_flows(inputs, local_subnet)
    target_flows = None
    if target is not None:
        packets = load_packets(target, local_subnet)
        tin, tout = split_directions(packets, TraceLabel("target"))
        target_flows = {Direction.INGOING: tin, Direction.OUTGOING: tout}
    report = {"kind": "detect", "version": REPORT_VERSION, "config": cfg.as_dict(),
              "folds": cfg.k_folds, "positive": list(cfg.positive_classes),
              "inputs": [{"label": i.label, "path": str(i.path)} for i in inputs],
              "target": None if target is None else str(target), "flows": {}}
    for direction, traces in flows.items():
        labels = {t.label.application for t in traces if len(t) >= 2}
        if not (labels & set(cfg.positive_classes)) or not (labels - set(cfg.positive_classes)):
            log.info("flow %s: needs both positive and standard data, skipped", direction.value)
            continue
        ds = build_dataset(traces, cfg.window_w, cfg.per_class_rows)
        bds = binary_relabel(ds, [p for p in cfg.positive_classes if p in ds.class_names])
        res = cross_validate(bds, cfg.k_folds, cfg.n_trees, cfg.seed, cfg.m_try)
        entry = binary_report(res, dsmod.CRYPTO).as_dict()
        entry["n_rows"] = len(bds)
        entry["rows_per_class"] = bds.class_counts()
        if target_flows is not None:
            sub = replace(cfg, positive_classes=tuple(
                p for p in cfg.positive_classes if p in ds.class_names))
            model = train_flow_model(traces, sub, direction)
            entry["target"] = alert_summary(model, target_flows[direction], cfg.window_w,
                                            (dsmod.CRYPTO,))
        report["flows"][direction.value] = entry
    if not report["flows"]:
        raise dsmod.InsufficientRowsError("no flow has both positive and standard data")
    return report


def detect_with_model(model: RandomForest, target: Path, positive: Sequence[str] = (),
                      local_subnet: str | None = None) -> dict:
    if model.n_features != len(FEATURE_NAMES):
        raise ValueError(f"model expects {model.n_features} features, "
                         f"this build produces {len(FEATURE_NAMES)}")
    direction = Direction(model.meta.get("direction", "in"))
    w = int(model.meta.get("window", 5))
    pos = model_positive_classes(model, positive)
    packets = load_packets(target, local_subnet)
    tin, tout = split_directions(packets, TraceLabel("target"))
    trace = tin if direction is Direction.INGOING else tout
    return {"kind": "detect", "version": REPORT_VERSION, "positive": list(pos),
            "target": str(target), "model_classes": list(model.class_names),
            "flows": {direction.value: {"target": alert_summary(model, trace, w, pos)}}}


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def atomic_write(path: Path, data: str | bytes) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
