"""Labeled datasets and k-fold partitions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .features import N_FEATURES, FeatureMatrix
from .seeding import rng

CRYPTO = "Crypto"
STANDARD = "Standard"


class InsufficientRowsError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    samples: np.ndarray        # (n_rows, 6) float
    labels: np.ndarray         # (n_rows,) int indices into class_names
    class_names: tuple[str, ...]

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if samples.ndim != 2:
            raise ValueError("samples must be a 2-D matrix")
        if labels.shape != (samples.shape[0],):
            raise ValueError("labels must be parallel to sample rows")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise ValueError("label index outside class_names")
        samples.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=self.n_classes)
        return {name: int(c) for name, c in zip(self.class_names, counts)}

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.samples[idx], self.labels[idx], self.class_names)


@dataclass(frozen=True)
class FoldPartition:
    k: int
    assignment: np.ndarray  # fold index per row

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def splits(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(train_idx, test_idx)`` for each fold in order."""
        for f in range(self.k):
            test = self.assignment == f
            yield np.flatnonzero(~test), np.flatnonzero(test)


def assemble(parts: Sequence[FeatureMatrix], per_class_rows: int | None = None) -> LabeledDataset:
    """Stack feature matrices into one dataset, one class per application name.

    Matrices sharing an application name are concatenated in input order.
    With ``per_class_rows`` each class keeps exactly its first that-many rows.
    """
    by_class: dict[str, list[np.ndarray]] = {}
    for fm in parts:
        by_class.setdefault(fm.source_label.application, []).append(
            np.asarray(fm.rows, dtype=float).reshape(-1, N_FEATURES))
    class_names = tuple(sorted(by_class))
    blocks, labels = [], []
    for ci, name in enumerate(class_names):
        rows = np.concatenate(by_class[name], axis=0)
        if per_class_rows is not None:
            if rows.shape[0] < per_class_rows:
                raise InsufficientRowsError(
                    f"class {name!r} has {rows.shape[0]} rows, need {per_class_rows}")
            rows = rows[:per_class_rows]
        blocks.append(rows)
        labels.append(np.full(rows.shape[0], ci, dtype=np.int64))
    if not blocks:
        return LabeledDataset(np.empty((0, N_FEATURES)), np.empty(0, dtype=np.int64), ())
    return LabeledDataset(np.concatenate(blocks), np.concatenate(labels), class_names)


def binary_relabel(ds: LabeledDataset, positive) -> LabeledDataset:
    """Collapse classes into Crypto (``positive``) versus Standard (the rest)."""
    positive = set(positive)
    unknown = positive - set(ds.class_names)
    if unknown:
        raise ValueError(f"unknown positive classes: {sorted(unknown)}")
    if not positive:
        raise ValueError("positive class set is empty")
    if positive == set(ds.class_names):
        raise ValueError("positive class set covers every class")
    is_pos = np.array([name in positive for name in ds.class_names])
    crypto = is_pos[ds.labels]
    # class_names sorted: Crypto=0, Standard=1
    return LabeledDataset(ds.samples, np.where(crypto, 0, 1), (CRYPTO, STANDARD))


def kfold(ds: LabeledDataset | int, k: int, seed: int) -> FoldPartition:
    """Unstratified random k-fold split; fold sizes differ by at most one."""
    n = ds if isinstance(ds, int) else len(ds)
    if not 2 <= k <= n:
        raise ValueError(f"k must be in [2, {n}], got {k}")
    perm = rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, k)):
        assignment[chunk] = f
    return FoldPartition(k, assignment)
