"""Run splits, accuracy reports, the data-fraction sweep, the per-subject
ID/OoD protocol and the robot-vs-human distribution comparison."""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_write_text
from .core import (
    CHANNEL_NAMES,
    N_CHANNELS,
    N_CLASSES,
    ContractError,
    RunKey,
    SensorRun,
    Source,
    SplitMode,
    SplitSpec,
    TaskLabel,
)
from .features import FeatureTable, apply_normalization, fit_normalization, make_windows, NormalizationParams
from .model import MlpParams, TrainConfig, predict, train

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)


class Regime(str, enum.Enum):
    ZERO_SHOT = "zero_shot"
    FINE_TUNED = "fine_tuned"


class SweepWarning(UserWarning):
    pass


# ---------------------------------------------------------------- splits


def split_counts(n: int) -> tuple[int, int, int]:
    """Runs assigned to (train, val, test) out of ``n``.

    Each split gets ``floor(n/3)``; the remainder goes to train, then val.
    """
    base, rem = divmod(n, 3)
    return base + (rem > 0), base + (rem > 1), base


def build_splits(
    entries: Iterable,
    mode: SplitMode | str = SplitMode.IN_DISTRIBUTION,
    held_out_subject: str | None = None,
    source: Source | str | None = None,
) -> SplitSpec:
    """Assign whole runs to train/val/test by run index within each (subject, task).

    ``entries`` is anything with ``subject_id``, ``task`` and ``run_index``
    (manifest entries, runs, feature rows); duplicates collapse. In
    out-of-distribution mode the held-out subject contributes only its test
    runs and every other subject only its train/val runs.
    """
    mode = SplitMode(mode)
    source = Source(source) if source is not None else None
    groups: dict[tuple[str, TaskLabel], set[int]] = {}
    for e in entries:
        if source is not None and getattr(e, "source", source) != source:
            continue
        task = getattr(e, "task", None)
        if task is None:
            task = e.label
        groups.setdefault((e.subject_id, TaskLabel(task)), set()).add(int(e.run_index))
    subjects = {s for s, _ in groups}
    if mode is SplitMode.OUT_OF_DISTRIBUTION:
        if held_out_subject is None:
            raise ContractError("out_of_distribution mode needs held_out_subject")
        if held_out_subject not in subjects:
            raise ContractError(f"held-out subject {held_out_subject!r} not in manifest")
    elif held_out_subject is not None and held_out_subject not in subjects:
        raise ContractError(f"subject {held_out_subject!r} not in manifest")

    train, val, test = set(), set(), set()
    for (subject, task), runs in sorted(groups.items()):
        order = sorted(runs)
        n_train, n_val, _ = split_counts(len(order))
        for i, r in enumerate(order):
            key = RunKey(subject, task, r)
            part = train if i < n_train else val if i < n_train + n_val else test
            if mode is SplitMode.OUT_OF_DISTRIBUTION:
                if (subject == held_out_subject) != (part is test):
                    continue
            part.add(key)
    return SplitSpec(frozenset(train), frozenset(val), frozenset(test), mode,
                     held_out_subject if mode is SplitMode.OUT_OF_DISTRIBUTION else None)


def split_table(table: FeatureTable, split: SplitSpec) -> tuple[FeatureTable, FeatureTable, FeatureTable]:
    keys = [RunKey(r.subject_id, r.task, r.run_index) for r in table.rows]
    return tuple(
        table.select(np.array([k in runs for k in keys], dtype=bool))
        for runs in (split.train_runs, split.val_runs, split.test_runs)
    )


# ---------------------------------------------------------------- metrics


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    regime: Regime | None = None
    fraction: float = 1.0
    split: SplitSpec | None = None
    seed: int | None = None

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=int)
        if self.regime is not None:
            self.regime = Regime(self.regime)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "regime": self.regime.value if self.regime else None,
            "fraction": self.fraction,
            "seed": self.seed,
            "split": self.split.to_dict() if self.split else None,
        }


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def evaluate(
    params: MlpParams,
    x,
    y,
    regime: Regime | str | None = None,
    fraction: float = 1.0,
    split: SplitSpec | None = None,
    seed: int | None = None,
) -> EvalReport:
    y = np.asarray(y, dtype=int)
    if y.size == 0:
        raise ContractError("test set is empty")
    cm = confusion_matrix(y, predict(params, x), params.dims[-1])
    return EvalReport(float(np.trace(cm) / cm.sum()), cm, regime, fraction, split, seed)


# ---------------------------------------------------------------- experiments


def stratified_nested_subsets(y, fractions: Sequence[float], seed: int) -> list[np.ndarray]:
    """Index sets holding ``round(f * n_c)`` samples of every class ``c``.

    One seeded permutation per class is shared by all fractions, so a smaller
    fraction's subset is contained in every larger one.
    """
    fractions = list(fractions)
    if any(not 0 < f <= 1 for f in fractions):
        raise ContractError("fractions must lie in (0, 1]")
    if fractions != sorted(fractions):
        raise ContractError("fractions must be sorted ascending")
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(seed)
    perms = {c: rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)}
    out = []
    for f in fractions:
        idx = np.concatenate([p[: int(round(f * p.size))] for p in perms.values()]) if perms else np.array([], int)
        out.append(np.sort(idx))
    return out


@dataclass
class ExperimentData:
    """Normalized feature arrays for one pretrain/fine-tune experiment."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    split: SplitSpec | None = None

    @classmethod
    def from_tables(cls, train: FeatureTable, val: FeatureTable, test: FeatureTable,
                    norm: NormalizationParams, split: SplitSpec | None = None) -> ExperimentData:
        return cls(
            apply_normalization(train.x, norm), train.y,
            apply_normalization(val.x, norm), val.y,
            apply_normalization(test.x, norm), test.y,
            split,
        )


@dataclass
class SweepRow:
    fraction: float
    seed: int
    regime: Regime
    accuracy: float | None
    n_train: int
    note: str = ""


def _sweep_job(args):
    data, ckpt, fraction, idx, seed, config = args
    rows, reports = [], []
    for regime in Regime:
        cfg = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
        init = ckpt if regime is Regime.FINE_TUNED else None
        res = train(data.x_train[idx], data.y_train[idx], data.x_val, data.y_val, cfg, init=init)
        rep = evaluate(res.params, data.x_test, data.y_test, regime, fraction, data.split, seed)
        rows.append(SweepRow(fraction, seed, regime, rep.accuracy, int(idx.size)))
        reports.append(rep)
    return rows, reports


def fraction_sweep(
    data: ExperimentData,
    checkpoint: MlpParams,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    config: TrainConfig = TrainConfig(),
    jobs: int = 1,
) -> tuple[list[SweepRow], list[EvalReport]]:
    """Zero-shot vs. fine-tuned accuracy on the fixed test split per (fraction, seed).

    Subsets of the human training split are class-stratified and nested
    across fractions for a given seed. A fraction that leaves some class
    without samples yields a warning row with ``accuracy=None``.
    """
    classes = np.unique(data.y_train)
    jobs_args, skipped = [], []
    for seed in seeds:
        for f, idx in zip(fractions, stratified_nested_subsets(data.y_train, fractions, seed)):
            if np.unique(data.y_train[idx]).size < classes.size:
                msg = f"fraction {f} seed {seed}: some class has no samples, skipped"
                warnings.warn(msg, SweepWarning, stacklevel=2)
                skipped += [SweepRow(f, seed, r, None, int(idx.size), msg) for r in Regime]
                continue
            jobs_args.append((data, checkpoint, f, idx, seed, config))
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, jobs_args))
    else:
        results = [_sweep_job(a) for a in jobs_args]
    rows = [r for rs, _ in results for r in rs] + skipped
    rows.sort(key=lambda r: (r.fraction, r.seed, r.regime.value))
    return rows, [rep for _, reps in results for rep in reps]


def sweep_means(rows: Sequence[SweepRow]) -> dict[tuple[float, Regime], float]:
    acc: dict[tuple[float, Regime], list[float]] = {}
    for r in rows:
        if r.accuracy is not None:
            acc.setdefault((r.fraction, r.regime), []).append(r.accuracy)
    return {k: float(np.mean(v)) for k, v in sorted(acc.items(), key=lambda kv: (kv[0][0], kv[0][1].value))}


def format_sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fraction", "seed", "regime", "accuracy", "n_train", "note"])
    for r in rows:
        w.writerow([repr(r.fraction), r.seed, r.regime.value, "" if r.accuracy is None else repr(r.accuracy), r.n_train, r.note])
    return buf.getvalue()


@dataclass
class SubjectRow:
    subject: str
    id_zero_shot: float
    id_fine_tuned: float
    ood_zero_shot: float
    ood_fine_tuned: float

    @property
    def id_boost(self) -> float:
        return self.id_fine_tuned - self.id_zero_shot

    @property
    def ood_boost(self) -> float:
        return self.ood_fine_tuned - self.ood_zero_shot


def subject_protocol(
    human: FeatureTable,
    checkpoint: MlpParams,
    norm: NormalizationParams,
    seeds: Sequence[int] = (0, 1, 2),
    config: TrainConfig = TrainConfig(),
    fraction: float = 1.0,
) -> list[SubjectRow]:
    """Per-subject in- vs. out-of-distribution accuracy, zero-shot and fine-tuned.

    Both modes test on the subject's own test runs; ID trains on every
    subject's train/val runs, OoD on everyone else's. Accuracies are means
    over ``seeds``; ``fraction`` subsamples the training windows.
    """
    subjects = sorted({r.subject_id for r in human.rows})
    if len(subjects) < 2:
        raise ContractError("subject protocol needs at least two subjects")
    out = []
    for subject in subjects:
        cells = {}
        for mode in SplitMode:
            split = build_splits(human.rows, mode, held_out_subject=subject)
            train_t, val_t, test_t = split_table(human, split)
            test_t = test_t.where(lambda r: r.subject_id == subject)
            data = ExperimentData.from_tables(train_t, val_t, test_t, norm, split)
            for regime in Regime:
                accs = []
                for seed in seeds:
                    (idx,) = stratified_nested_subsets(data.y_train, [fraction], seed)
                    cfg = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
                    init = checkpoint if regime is Regime.FINE_TUNED else None
                    res = train(data.x_train[idx], data.y_train[idx], data.x_val, data.y_val, cfg, init=init)
                    accs.append(evaluate(res.params, data.x_test, data.y_test).accuracy)
                cells[(mode, regime)] = float(np.mean(accs))
        ID, OOD = SplitMode.IN_DISTRIBUTION, SplitMode.OUT_OF_DISTRIBUTION
        out.append(SubjectRow(
            subject,
            cells[(ID, Regime.ZERO_SHOT)], cells[(ID, Regime.FINE_TUNED)],
            cells[(OOD, Regime.ZERO_SHOT)], cells[(OOD, Regime.FINE_TUNED)],
        ))
    return out


def format_subjects_csv(rows: Sequence[SubjectRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject", "id_zero_shot", "id_fine_tuned", "id_boost", "ood_zero_shot", "ood_fine_tuned", "ood_boost"])
    for r in rows:
        w.writerow([r.subject] + [repr(v) for v in (r.id_zero_shot, r.id_fine_tuned, r.id_boost,
                                                   r.ood_zero_shot, r.ood_fine_tuned, r.ood_boost)])
    if rows:
        mean_boost = float(np.mean([b for r in rows for b in (r.id_boost, r.ood_boost)]))
        w.writerow(["mean_boost", "", "", repr(mean_boost), "", "", ""])
    return buf.getvalue()


# ---------------------------------------------------------------- distributions


def quartiles(x) -> tuple[float, float, float]:
    """(q1, median, q3) by linear interpolation between order statistics."""
    q = np.quantile(np.asarray(x, dtype=float), [0.25, 0.5, 0.75], method="linear")
    return float(q[0]), float(q[1]), float(q[2])


@dataclass(frozen=True)
class BoxplotStats:
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outlier_count: int
    n: int

    @classmethod
    def of(cls, x) -> BoxplotStats:
        x = np.asarray(x, dtype=float).ravel()
        q1, med, q3 = quartiles(x)
        iqr = q3 - q1
        lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        return cls(q1, med, q3, lo, hi, int(np.sum((x < lo) | (x > hi))), int(x.size))


def interval_overlap(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Length of the intersection over length of the union of two intervals."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    if union == 0:
        return 1.0 if a == b else 0.0
    return inter / union


@dataclass
class DistributionReport:
    boxes: dict[tuple[str, Source], BoxplotStats]
    overlap: dict[str, float]
    window_mean_variance: dict[tuple[str, Source], float] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for ch in CHANNEL_NAMES:
            for src in Source:
                b = self.boxes[(ch, src)]
                out.append({
                    "channel": ch, "source": src.value,
                    "q1": b.q1, "median": b.median, "q3": b.q3,
                    "whisker_low": b.whisker_low, "whisker_high": b.whisker_high,
                    "outlier_count": b.outlier_count, "n": b.n,
                    "window_mean_variance": self.window_mean_variance.get((ch, src), float("nan")),
                    "iqr_overlap": self.overlap[ch],
                })
        return out


def window_mean_variance(runs: Sequence[SensorRun], window_seconds: float = 10.0, overlap_fraction: float = 0.5) -> np.ndarray:
    """Per-channel variance (ddof=0) of window means pooled over ``runs``."""
    means = [run.values[w.start_index:w.end_index].mean(axis=0)
             for run in runs for w in make_windows(run, window_seconds, overlap_fraction)]
    return np.var(np.array(means).reshape(-1, N_CHANNELS), axis=0)


def distribution_report(runs: Sequence[SensorRun], window_seconds: float = 10.0,
                        overlap_fraction: float = 0.5) -> DistributionReport:
    """Boxplot statistics of raw channel values per source plus IQR overlap scores."""
    by_source = {s: [r for r in runs if r.source is s] for s in Source}
    for s, group in by_source.items():
        if not group:
            raise ContractError(f"source {s.value!r} absent from runs")
    raw = {s: np.concatenate([r.values for r in g]) for s, g in by_source.items()}
    wmv = {s: window_mean_variance(g, window_seconds, overlap_fraction) for s, g in by_source.items()}
    boxes, overlap, variances = {}, {}, {}
    for c, ch in enumerate(CHANNEL_NAMES):
        for s in Source:
            boxes[(ch, s)] = BoxplotStats.of(raw[s][:, c])
            variances[(ch, s)] = float(wmv[s][c])
        h, r = boxes[(ch, Source.HUMAN)], boxes[(ch, Source.ROBOT)]
        overlap[ch] = interval_overlap((h.q1, h.q3), (r.q1, r.q3))
    return DistributionReport(boxes, overlap, variances)


def format_distribution_csv(report: DistributionReport) -> str:
    rows = report.rows()
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def write_text(path: str | os.PathLike, text: str) -> Path:
    return atomic_write_text(path, text)
