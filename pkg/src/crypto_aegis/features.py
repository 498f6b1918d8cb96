"""Per-packet flow features.

Each row of a feature matrix describes one packet (from the second packet on):

    dt      interarrival time to the previous packet
    sz      size of the packet
    mm_dt   moving mean of dt over the trailing window
    sd_dt   moving (population) standard deviation of dt
    mm_sz   moving mean of sz
    sd_sz   moving standard deviation of sz

Windows are causal: the value at index i only looks at i and the ``w - 1``
rows before it, shrinking near the start of the trace.
"""

from __future__ import annotations

import csv
import io
import enum
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .trace import DirectionalTrace, InsufficientPacketsError, TraceLabel

FEATURE_NAMES = ("dt", "sz", "mm_dt", "sd_dt", "mm_sz", "sd_sz")
N_FEATURES = len(FEATURE_NAMES)
SIZE_FEATURES = ("sz", "mm_sz", "sd_sz")
DEFAULT_WINDOW = 5


class Stat(enum.Enum):
    MEAN = "mean"
    STD = "std"


@dataclass(frozen=True)
class WindowConfig:
    w: int = DEFAULT_WINDOW

    def __post_init__(self):
        if self.w < 1:
            raise ValueError(f"window length must be >= 1, got {self.w}")


@dataclass(frozen=True)
class FeatureMatrix:
    rows: np.ndarray  # shape (n_packets - 1, 6)
    source_label: TraceLabel

    def __len__(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, FEATURE_NAMES.index(name)]


def interarrivals(trace: DirectionalTrace) -> np.ndarray:
    if len(trace) < 2:
        raise InsufficientPacketsError(2, len(trace))
    return np.diff(trace.times())


def moving_stat(series, w: int, kind: Stat) -> np.ndarray:
    """Trailing-window mean or population std, same length as ``series``."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("series must be a non-empty 1-D sequence")
    if w < 1:
        raise ValueError("w must be >= 1")
    kind = Stat(kind)
    reduce = np.mean if kind is Stat.MEAN else np.std
    out = np.empty_like(x)
    head = min(w - 1, x.size)
    for i in range(head):
        out[i] = reduce(x[:i + 1])
    if x.size >= w:
        out[w - 1:] = reduce(sliding_window_view(x, w), axis=1)
    if kind is Stat.STD and w == 1:
        out[:] = 0.0
    return out


def featurize(trace: DirectionalTrace, cfg: WindowConfig = WindowConfig()) -> FeatureMatrix:
    dt = interarrivals(trace)
    sz = trace.sizes()[1:]
    rows = np.column_stack([
        dt,
        sz,
        moving_stat(dt, cfg.w, Stat.MEAN),
        moving_stat(dt, cfg.w, Stat.STD),
        moving_stat(sz, cfg.w, Stat.MEAN),
        moving_stat(sz, cfg.w, Stat.STD),
    ])
    return FeatureMatrix(rows, trace.label)


def format_feature_csv(matrices) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FEATURE_NAMES + ("label",))
    for fm in matrices:
        name = fm.source_label.application
        for row in fm.rows:
            writer.writerow([repr(float(v)) for v in row] + [name])
    return buf.getvalue()


def parse_feature_csv(text: str) -> list[FeatureMatrix]:
    """Inverse of :func:`format_feature_csv`; one matrix per label, first-seen order."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != FEATURE_NAMES + ("label",):
        raise ValueError("line 1: expected feature CSV header")
    grouped: dict[str, list[list[float]]] = {}
    for row in reader:
        if not row:
            continue
        if len(row) != N_FEATURES + 1:
            raise ValueError(f"line {reader.line_num}: expected {N_FEATURES + 1} fields")
        try:
            values = [float(v) for v in row[:N_FEATURES]]
        except ValueError:
            raise ValueError(f"line {reader.line_num}: invalid number") from None
        grouped.setdefault(row[-1], []).append(values)
    return [FeatureMatrix(np.array(rows, dtype=float).reshape(-1, N_FEATURES), TraceLabel(name))
            for name, rows in grouped.items()]
