"""Domain types and the frozen channel/statistic layout shared by every stage."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np


class ContractError(ValueError):
    """A precondition of a public operation was violated."""


class ChannelId(enum.IntEnum):
    ACCEL_X = 0
    ACCEL_Y = 1
    ACCEL_Z = 2
    GYRO_X = 3
    GYRO_Y = 4
    GYRO_Z = 5
    MAG_X = 6
    MAG_Y = 7
    MAG_Z = 8
    MIC = 9
    CURRENT = 10

    @property
    def column(self) -> str:
        return self.name.lower()


class TaskLabel(enum.IntEnum):
    CUTTING = 0
    ENGRAVING = 1
    ROUTING = 2
    SANDING = 3

    @classmethod
    def parse(cls, value: str | int | TaskLabel) -> TaskLabel:
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(value)


class Source(str, enum.Enum):
    HUMAN = "human"
    ROBOT = "robot"


class Stat(enum.IntEnum):
    MIN = 0
    MAX = 1
    MEAN = 2
    SUM = 3
    VARIANCE = 4
    STD_DEV = 5
    SEM = 6
    SKEWNESS = 7
    KURTOSIS = 8
    MAD = 9


N_CHANNELS = len(ChannelId)
N_STATS = len(Stat)
N_FEATURES = N_CHANNELS * N_STATS
N_CLASSES = len(TaskLabel)
CHANNEL_NAMES: tuple[str, ...] = tuple(c.column for c in ChannelId)


def feature_index(channel: ChannelId | int, stat: Stat | int) -> int:
    """Position of ``stat`` for ``channel`` in the channel-major feature vector."""
    c, s = int(channel), int(stat)
    if not 0 <= c < N_CHANNELS:
        raise ContractError(f"channel ordinal {c} outside [0, {N_CHANNELS})")
    if not 0 <= s < N_STATS:
        raise ContractError(f"statistic ordinal {s} outside [0, {N_STATS})")
    return N_STATS * c + s


FEATURE_NAMES: tuple[str, ...] = tuple(
    f"{c.column}_{s.name.lower()}" for c in ChannelId for s in Stat
)


class RunKey(NamedTuple):
    subject_id: str
    task: TaskLabel
    run_index: int


@dataclass(frozen=True)
class SensorSample:
    t: float
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != N_CHANNELS:
            raise ContractError(f"sample needs {N_CHANNELS} values, got {len(self.values)}")
        if not all(np.isfinite(self.values)) or not np.isfinite(self.t):
            raise ContractError("sample values must be finite")


@dataclass(frozen=True, eq=False)
class SensorRun:
    """One recording: ``t`` is (N,) seconds from run start, ``values`` is (N, 11).

    Samples are kept as two read-only arrays rather than a list of
    :class:`SensorSample`; use :meth:`sample` or iterate to get those.
    """

    t: np.ndarray
    values: np.ndarray
    rate_hz: float
    subject_id: str
    source: Source
    task: TaskLabel
    run_index: int

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        v = np.array(self.values, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ContractError("run has no samples")
        if v.shape != (t.size, N_CHANNELS):
            raise ContractError(f"values shape {v.shape} != ({t.size}, {N_CHANNELS})")
        if not self.rate_hz > 0:
            raise ContractError(f"rate_hz must be positive, got {self.rate_hz}")
        if self.run_index < 0:
            raise ContractError(f"run_index must be >= 0, got {self.run_index}")
        if t[0] < 0 or not np.all(np.isfinite(t)) or not np.all(np.isfinite(v)):
            raise ContractError("timestamps must be finite and non-negative, values finite")
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise ContractError("timestamps must be strictly increasing")
        if dt.size and np.max(np.abs(dt - 1.0 / self.rate_hz)) > 1e-6:
            raise ContractError(f"sample spacing deviates from 1/{self.rate_hz} s by more than 1e-6 s")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "source", Source(self.source))
        object.__setattr__(self, "task", TaskLabel.parse(self.task))
        object.__setattr__(self, "rate_hz", float(self.rate_hz))

    def __len__(self) -> int:
        return self.t.size

    def __iter__(self):
        for i in range(len(self)):
            yield self.sample(i)

    def sample(self, i: int) -> SensorSample:
        return SensorSample(float(self.t[i]), tuple(float(x) for x in self.values[i]))

    @property
    def key(self) -> RunKey:
        return RunKey(self.subject_id, self.task, self.run_index)

    @property
    def run_ref(self) -> str:
        return f"{self.source.value}/{self.subject_id}/{self.task.name.lower()}/{self.run_index}"

    @property
    def duration(self) -> float:
        return len(self) / self.rate_hz


@dataclass(frozen=True)
class Window:
    """Half-open sample range ``[start_index, end_index)`` of a parent run."""

    run_ref: str
    start_index: int
    end_index: int
    label: TaskLabel
    subject_id: str
    source: Source
    run_index: int = 0

    @property
    def length(self) -> int:
        return self.end_index - self.start_index

    @property
    def key(self) -> RunKey:
        return RunKey(self.subject_id, self.label, self.run_index)

    def slice(self, run: SensorRun) -> np.ndarray:
        if run.run_ref != self.run_ref:
            raise ContractError(f"window belongs to {self.run_ref}, not {run.run_ref}")
        return run.values[self.start_index:self.end_index]


class SplitMode(str, enum.Enum):
    IN_DISTRIBUTION = "in_distribution"
    OUT_OF_DISTRIBUTION = "out_of_distribution"


@dataclass(frozen=True)
class SplitSpec:
    train_runs: frozenset[RunKey]
    val_runs: frozenset[RunKey]
    test_runs: frozenset[RunKey]
    mode: SplitMode = SplitMode.IN_DISTRIBUTION
    held_out_subject: str | None = None

    def __post_init__(self):
        for name in ("train_runs", "val_runs", "test_runs"):
            object.__setattr__(self, name, frozenset(RunKey(*k) for k in getattr(self, name)))
        object.__setattr__(self, "mode", SplitMode(self.mode))
        a, b, c = self.train_runs, self.val_runs, self.test_runs
        overlap = (a & b) | (a & c) | (b & c)
        if overlap:
            raise ContractError(f"split sets overlap on {sorted(overlap)[:3]}")
        if self.mode is SplitMode.OUT_OF_DISTRIBUTION:
            if self.held_out_subject is None:
                raise ContractError("out_of_distribution split needs held_out_subject")
            leaked = [k for k in a | b if k.subject_id == self.held_out_subject]
            if leaked:
                raise ContractError(f"held-out subject {self.held_out_subject!r} in train/val: {leaked[:3]}")

    def assignment(self, key: Iterable) -> str | None:
        key = RunKey(*key)
        for name, runs in (("train", self.train_runs), ("val", self.val_runs), ("test", self.test_runs)):
            if key in runs:
                return name
        return None

    def to_dict(self) -> dict:
        def enc(runs):
            return [[k.subject_id, k.task.name.lower(), k.run_index] for k in sorted(runs)]

        return {
            "mode": self.mode.value,
            "held_out_subject": self.held_out_subject,
            "train": enc(self.train_runs),
            "val": enc(self.val_runs),
            "test": enc(self.test_runs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SplitSpec:
        def dec(rows):
            return frozenset(RunKey(s, TaskLabel.parse(t), int(i)) for s, t, i in rows)

        return cls(dec(d["train"]), dec(d["val"]), dec(d["test"]), SplitMode(d["mode"]), d.get("held_out_subject"))
