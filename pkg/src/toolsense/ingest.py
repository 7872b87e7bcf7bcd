"""Run CSV / manifest parsing and window-level outlier cleaning."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_write_json, atomic_write_text
from .core import CHANNEL_NAMES, N_CHANNELS, ContractError, SensorRun, Source, TaskLabel, Window

log = logging.getLogger(__name__)

CSV_COLUMNS: tuple[str, ...] = ("t",) + CHANNEL_NAMES
CSV_HEADER = ",".join(CSV_COLUMNS)
MANIFEST_SUFFIX = ".manifest.json"
DEFAULT_RATE_HZ = 100.0
MAD_SCALE = 1.4826


class IngestError(Exception):
    pass


class SchemaError(IngestError):
    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class ParseError(IngestError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class DataError(IngestError):
    pass


class EmptyRunError(DataError):
    pass


class ManifestError(IngestError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subject_id: str
    source: Source
    task: TaskLabel
    run_index: int
    rate_hz: float = DEFAULT_RATE_HZ

    def __post_init__(self):
        object.__setattr__(self, "source", Source(self.source))
        object.__setattr__(self, "task", TaskLabel.parse(self.task))
        if not self.rate_hz > 0:
            raise ManifestError(f"rate_hz must be positive for {self.path!r}, got {self.rate_hz}")

    @property
    def identity(self) -> tuple[str, Source, TaskLabel, int]:
        return (self.subject_id, self.source, self.task, self.run_index)

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "subject_id": self.subject_id,
            "source": self.source.value,
            "task": self.task.name.lower(),
            "run_index": self.run_index,
            "rate_hz": self.rate_hz,
        }


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen: dict[tuple, str] = {}
        for e in self.entries:
            if e.identity in seen:
                s, src, task, i = e.identity
                raise ManifestError(
                    f"duplicate entry (subject={s}, source={src.value}, task={task.name.lower()}, "
                    f"run_index={i}): {seen[e.identity]!r} and {e.path!r}"
                )
            seen[e.identity] = e.path

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def subjects(self, source: Source | None = None) -> list[str]:
        return sorted({e.subject_id for e in self.entries if source is None or e.source == source})


def load_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise ManifestError(f"{path}: manifest must be a JSON array of entries")
    entries = []
    required = ("path", "subject_id", "source", "task", "run_index")
    for i, item in enumerate(raw):
        missing = [f for f in required if f not in item]
        if missing:
            raise ManifestError(f"{path}: entry {i} missing field {missing[0]!r}")
        try:
            entries.append(
                ManifestEntry(
                    path=str(item["path"]),
                    subject_id=str(item["subject_id"]),
                    source=item["source"],
                    task=item["task"],
                    run_index=int(item["run_index"]),
                    rate_hz=float(item.get("rate_hz", DEFAULT_RATE_HZ)),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ManifestError(f"{path}: entry {i}: invalid value {exc}") from exc
    return Manifest(tuple(entries), root=path.parent)


def save_manifest(manifest: Manifest, path: str | os.PathLike) -> Path:
    return atomic_write_json(path, [e.to_dict() for e in manifest.entries])


def _check_header(header: list[str], path) -> None:
    got = [h.strip() for h in header]
    missing = [c for c in CSV_COLUMNS if c not in got]
    if missing:
        raise SchemaError(f"{path}: missing column {missing[0]!r}", column=missing[0])
    extra = [c for c in got if c not in CSV_COLUMNS]
    if extra:
        raise SchemaError(f"{path}: unexpected column {extra[0]!r}", column=extra[0])
    if got != list(CSV_COLUMNS):
        raise SchemaError(f"{path}: columns out of order, expected {CSV_HEADER!r}", column=None)


def parse_run_csv(path: str | os.PathLike, meta: ManifestEntry) -> SensorRun:
    """Read one run CSV into a :class:`SensorRun` carrying ``meta``'s labels.

    Raises SchemaError for a wrong header, ParseError (with 1-based data row)
    for bad cells, EmptyRunError for a header-only file and DataError for
    timestamps that are not strictly increasing at the expected spacing.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty, no header row") from None
        _check_header(header, path)
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise ParseError(f"{path}: row {row_no} has {len(row)} cells, expected {len(CSV_COLUMNS)}", row=row_no)
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                bad = next(c for c, x in zip(CSV_COLUMNS, row) if not _is_float(x))
                raise ParseError(f"{path}: row {row_no} column {bad!r}: non-numeric cell", row=row_no) from None
    if not rows:
        raise EmptyRunError(f"{path}: no data rows")
    data = np.asarray(rows)
    if not np.all(np.isfinite(data)):
        row_no = int(np.argwhere(~np.isfinite(data))[0, 0]) + 1
        raise ParseError(f"{path}: row {row_no}: non-finite value", row=row_no)
    t = data[:, 0]
    dt = np.diff(t)
    if np.any(dt <= 0):
        row_no = int(np.argmax(dt <= 0)) + 2
        raise DataError(f"{path}: timestamps not strictly increasing at row {row_no}")
    try:
        return SensorRun(
            t=t,
            values=data[:, 1:],
            rate_hz=meta.rate_hz,
            subject_id=meta.subject_id,
            source=meta.source,
            task=meta.task,
            run_index=meta.run_index,
        )
    except ContractError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _is_float(x: str) -> bool:
    try:
        float(x)
    except ValueError:
        return False
    return True


def format_run_csv(run: SensorRun) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for t, row in zip(run.t.tolist(), run.values.tolist()):
        buf.write(repr(t))
        for x in row:
            buf.write(",")
            buf.write(repr(x))
        buf.write("\n")
    return buf.getvalue()


def write_run_csv(run: SensorRun, path: str | os.PathLike) -> Path:
    return atomic_write_text(path, format_run_csv(run))


def load_runs(manifest: Manifest) -> list[SensorRun]:
    return [parse_run_csv(manifest.resolve(e), e) for e in manifest.entries]


@dataclass(frozen=True)
class CleaningReport:
    windows_examined: int
    windows_removed: int
    removal_fraction: float
    per_channel_flag_counts: tuple[int, ...]
    warning: str | None = None

    def to_dict(self) -> dict:
        return {
            "windows_examined": self.windows_examined,
            "windows_removed": self.windows_removed,
            "removal_fraction": self.removal_fraction,
            "per_channel_flag_counts": list(self.per_channel_flag_counts),
            "warning": self.warning,
        }


@dataclass(frozen=True)
class RobustReference:
    """Per-channel median of window means and MAD of window means scaled by 1.4826."""

    median: np.ndarray
    spread: np.ndarray


def window_means(slices: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([np.mean(s, axis=0) for s in slices], dtype=float).reshape(-1, N_CHANNELS)


def robust_reference(means: np.ndarray) -> RobustReference:
    med = np.median(means, axis=0)
    return RobustReference(med, MAD_SCALE * np.median(np.abs(means - med), axis=0))


def outlier_flags(means: np.ndarray, k: float, reference: RobustReference) -> np.ndarray:
    """(n_windows, 11) boolean: channel mean deviates by more than ``k`` spreads.

    A zero spread flags any non-zero deviation.
    """
    dev = np.abs(means - reference.median)
    if np.isinf(k):
        return np.zeros(dev.shape, dtype=bool)
    return dev > k * reference.spread


def clean_outliers(
    windows: Sequence[Window],
    slices: Sequence[np.ndarray],
    k: float = 3.5,
    reference: RobustReference | None = None,
) -> tuple[list[Window], CleaningReport]:
    """Drop windows whose mean on any channel is a robust-z outlier.

    ``reference`` defaults to statistics of the given windows; pass a
    previously computed one to filter another set against the same baseline.
    """
    if not k > 0:
        raise ContractError(f"k must be positive, got {k}")
    if len(windows) == 0:
        raise ContractError("no windows to clean")
    if len(windows) != len(slices):
        raise ContractError(f"{len(windows)} windows but {len(slices)} slices")
    means = window_means(slices)
    if reference is None:
        reference = robust_reference(means)
    flags = outlier_flags(means, k, reference)
    removed = flags.any(axis=1)
    kept = [w for w, r in zip(windows, removed) if not r]
    n, n_removed = len(windows), int(removed.sum())
    warning = None
    if n_removed == n:
        warning = f"all {n} windows removed at k={k}"
        log.warning(warning)
    report = CleaningReport(
        windows_examined=n,
        windows_removed=n_removed,
        removal_fraction=n_removed / n,
        per_channel_flag_counts=tuple(int(c) for c in flags.sum(axis=0)),
        warning=warning,
    )
    return kept, report
