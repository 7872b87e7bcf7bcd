"""Windowing, per-channel statistics and [0, 1] min-max normalization."""

from __future__ import annotations

import csv
import io
import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_write_json, atomic_write_text
from .core import (
    N_CHANNELS,
    N_FEATURES,
    ContractError,
    SensorRun,
    Source,
    TaskLabel,
    Window,
)
from .ingest import CleaningReport, clean_outliers

FEATURE_COLUMNS: tuple[str, ...] = tuple(f"f{i:03d}" for i in range(N_FEATURES))
FEATURE_CSV_HEADER: tuple[str, ...] = ("subject", "source", "task", "run_index", "window_start") + FEATURE_COLUMNS


class ShortRunWarning(UserWarning):
    """The run is shorter than a single window."""


def window_geometry(rate_hz: float, window_seconds: float, overlap_fraction: float) -> tuple[int, int]:
    """Return ``(window_samples, stride_samples)``."""
    if not window_seconds > 0:
        raise ContractError(f"window_seconds must be positive, got {window_seconds}")
    if not 0 <= overlap_fraction < 1:
        raise ContractError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    size = int(round(rate_hz * window_seconds))
    stride = int(round(rate_hz * window_seconds * (1 - overlap_fraction)))
    if size < 1 or stride < 1:
        raise ContractError(f"window of {window_seconds} s at {rate_hz} Hz gives size {size}, stride {stride}")
    return size, stride


def make_windows(run: SensorRun, window_seconds: float = 10.0, overlap_fraction: float = 0.5) -> list[Window]:
    """Cut ``run`` into fixed-length windows starting every ``stride`` samples.

    A run shorter than one window yields ``[]`` and a :class:`ShortRunWarning`.
    """
    size, stride = window_geometry(run.rate_hz, window_seconds, overlap_fraction)
    n = len(run)
    if n < size:
        warnings.warn(f"{run.run_ref}: {n} samples < window of {size}", ShortRunWarning, stacklevel=2)
        return []
    return [
        Window(run.run_ref, start, start + size, run.task, run.subject_id, run.source, run.run_index)
        for start in range(0, n - size + 1, stride)
    ]


def _median(a: np.ndarray) -> np.ndarray:
    return np.median(a, axis=-2)


def channel_statistics(x: np.ndarray) -> np.ndarray:
    """Ten statistics per channel for samples along axis -2.

    ``x`` has shape ``(..., n, channels)``; the result has shape
    ``(..., channels, 10)`` in the order min, max, mean, sum, variance,
    std_dev, sem, skewness, kurtosis, mad.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-2]
    if n < 1:
        raise ContractError("cannot extract features from an empty window")

    lo = x.min(axis=-2)
    hi = x.max(axis=-2)
    total = x.sum(axis=-2)
    mean = total / n
    constant = lo == hi
    # constant channels: force exact zeros instead of rounding residue
    d = np.where(constant[..., None, :], 0.0, x - mean[..., None, :])
    m2 = (d * d).mean(axis=-2)

    var = m2 * n / (n - 1) if n > 1 else np.zeros_like(m2)
    std = np.sqrt(var)
    sem = std / np.sqrt(n)

    # shape moments on deviations scaled to max |d| = 1, so tiny spreads cannot underflow
    span = np.abs(d).max(axis=-2)
    degenerate = span == 0
    z = d / np.where(degenerate, 1.0, span)[..., None, :]
    z2 = z * z
    zm2 = np.where(degenerate, 1.0, z2.mean(axis=-2))
    if n >= 3:
        g1 = (z2 * z).mean(axis=-2) / zm2**1.5
        skew = np.where(degenerate, 0.0, g1 * np.sqrt(n * (n - 1.0)) / (n - 2.0))
    else:
        skew = np.zeros_like(m2)
    if n >= 4:
        g2 = (z2 * z2).mean(axis=-2) / (zm2 * zm2) - 3.0
        kurt = np.where(degenerate, 0.0, ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0)))
    else:
        kurt = np.zeros_like(m2)

    med = _median(x)
    mad = _median(np.abs(x - med[..., None, :]))
    return np.stack([lo, hi, mean, total, var, std, sem, skew, kurt, mad], axis=-1)


def extract_features(samples: np.ndarray) -> np.ndarray:
    """110-entry channel-major feature vector of one ``(n, 11)`` window."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != N_CHANNELS:
        raise ContractError(f"window must have shape (n, {N_CHANNELS}), got {samples.shape}")
    return channel_statistics(samples).reshape(N_FEATURES)


def extract_feature_matrix(run: SensorRun, windows: Sequence[Window]) -> np.ndarray:
    """Stack feature vectors of equal-length ``windows`` cut from ``run``."""
    if not windows:
        return np.empty((0, N_FEATURES))
    starts = np.array([w.start_index for w in windows])
    size = windows[0].length
    if any(w.length != size for w in windows):
        raise ContractError("windows of one batch must share a length")
    stacked = run.values[starts[:, None] + np.arange(size)[None, :]]
    return channel_statistics(stacked).reshape(len(windows), N_FEATURES)


@dataclass(frozen=True, eq=False)
class NormalizationParams:
    min: np.ndarray
    max: np.ndarray
    fitted_on: str = "train"

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float)
        hi = np.asarray(self.max, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ContractError("min/max must be 1-d arrays of equal length")
        if np.any(lo > hi):
            raise ContractError("normalization min exceeds max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def to_dict(self) -> dict:
        return {"fitted_on": self.fitted_on, "min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationParams:
        return cls(np.array(d["min"], dtype=float), np.array(d["max"], dtype=float), d.get("fitted_on", "train"))

    def save(self, path: str | os.PathLike) -> Path:
        return atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str | os.PathLike) -> NormalizationParams:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_normalization(vectors, fitted_on: str = "train") -> NormalizationParams:
    x = np.atleast_2d(np.asarray(vectors, dtype=float))
    if x.shape[0] == 0:
        raise ContractError("cannot fit normalization on an empty set")
    return NormalizationParams(x.min(axis=0), x.max(axis=0), fitted_on)


def apply_normalization(v, p: NormalizationParams) -> np.ndarray:
    """Map features to [0, 1] with ``p``; clamps outside values, 0 where max == min."""
    v = np.asarray(v, dtype=float)
    span = p.max - p.min
    flat = span == 0
    out = (v - p.min) / np.where(flat, 1.0, span)
    out = np.clip(out, 0.0, 1.0)
    return np.where(flat, 0.0, out)


@dataclass(frozen=True)
class FeatureRow:
    subject_id: str
    source: Source
    task: TaskLabel
    run_index: int
    window_start: int


@dataclass(eq=False)
class FeatureTable:
    """Feature matrix with per-row run metadata, as stored in a features CSV."""

    rows: list[FeatureRow]
    x: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1, N_FEATURES)
        if len(self.rows) != self.x.shape[0]:
            raise ContractError(f"{len(self.rows)} metadata rows for {self.x.shape[0]} vectors")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def y(self) -> np.ndarray:
        return np.array([int(r.task) for r in self.rows], dtype=int)

    def select(self, mask) -> FeatureTable:
        mask = np.asarray(mask)
        if mask.dtype == bool:
            idx = np.flatnonzero(mask)
        else:
            idx = mask.astype(int)
        return FeatureTable([self.rows[i] for i in idx], self.x[idx])

    def where(self, pred) -> FeatureTable:
        return self.select(np.array([bool(pred(r)) for r in self.rows], dtype=bool))

    @classmethod
    def concat(cls, tables: Sequence[FeatureTable]) -> FeatureTable:
        rows = [r for t in tables for r in t.rows]
        x = np.concatenate([t.x for t in tables]) if tables else np.empty((0, N_FEATURES))
        return cls(rows, x)


def featurize_run(run: SensorRun, windows: Sequence[Window] | None = None, **window_kw) -> FeatureTable:
    if windows is None:
        windows = make_windows(run, **window_kw)
    rows = [FeatureRow(run.subject_id, run.source, run.task, run.run_index, w.start_index) for w in windows]
    return FeatureTable(rows, extract_feature_matrix(run, windows))


def format_feature_csv(table: FeatureTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_CSV_HEADER)
    for r, v in zip(table.rows, table.x.tolist()):
        w.writerow([r.subject_id, r.source.value, r.task.name.lower(), r.run_index, r.window_start] + [repr(f) for f in v])
    return buf.getvalue()


def write_feature_csv(table: FeatureTable, path: str | os.PathLike) -> Path:
    return atomic_write_text(path, format_feature_csv(table))


def read_feature_csv(path: str | os.PathLike) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != FEATURE_CSV_HEADER:
            raise ValueError(f"{path}: unexpected feature CSV header")
        rows, x = [], []
        for rec in reader:
            rows.append(FeatureRow(rec[0], Source(rec[1]), TaskLabel.parse(rec[2]), int(rec[3]), int(rec[4])))
            x.append([float(f) for f in rec[5:]])
    return FeatureTable(rows, np.array(x, dtype=float).reshape(-1, N_FEATURES))


def featurize_runs(
    runs: Sequence[SensorRun],
    window_seconds: float = 10.0,
    overlap_fraction: float = 0.5,
    clean_k: float | None = 3.5,
) -> tuple[FeatureTable, dict[Source, CleaningReport]]:
    """Window and featurize ``runs``, optionally dropping outlier windows.

    Cleaning statistics are computed per (source, task) group so that the
    spread between tasks does not mark a whole task as outlying. The
    returned reports are merged per source.
    """
    tables = []
    reports: dict[Source, list[CleaningReport]] = {}
    groups: dict[tuple[Source, TaskLabel], list[SensorRun]] = {}
    for run in runs:
        groups.setdefault((run.source, run.task), []).append(run)
    for (source, _task), group in sorted(groups.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        pairs = [(run, make_windows(run, window_seconds, overlap_fraction)) for run in group]
        windows = [w for _, ws in pairs for w in ws]
        if clean_k is not None and windows:
            slices = [w.slice(run) for run, ws in pairs for w in ws]
            kept, report = clean_outliers(windows, slices, clean_k)
            reports.setdefault(source, []).append(report)
            keep = set(kept)
            pairs = [(run, [w for w in ws if w in keep]) for run, ws in pairs]
        tables += [featurize_run(run, ws) for run, ws in pairs]
    return FeatureTable.concat(tables), {s: merge_reports(r) for s, r in reports.items()}


def merge_reports(reports: Sequence[CleaningReport]) -> CleaningReport:
    examined = sum(r.windows_examined for r in reports)
    removed = sum(r.windows_removed for r in reports)
    flags = tuple(int(sum(c)) for c in zip(*(r.per_channel_flag_counts for r in reports)))
    warnings_ = [r.warning for r in reports if r.warning]
    return CleaningReport(examined, removed, removed / examined if examined else 0.0, flags,
                          "; ".join(warnings_) or None)
