"""Seeded generator of robot-style and human-style tool runs.

Every pass of the tool follows a trapezoidal velocity profile. The sensor
channels are an additive model driven by that motion, the instantaneous
cutting load and the tool speed:

* accel: pass acceleration + tool vibration (rpm/60 Hz) + gravity projected
  through the work angle
* gyro: rate of change of the wandering work/travel angles
* mag: ambient field rotated by those angles
* mic: load-proportional envelope on the tool-frequency carrier plus
  slow handling noise scaled by compliance
* current: idle draw + load-proportional draw

Robot mode keeps timing exact and angles nearly fixed; human mode adds
timing jitter, speed/stroke drift, pauses, random per-pass depth and arm
compliance.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from .core import N_CHANNELS, ChannelId, ContractError, SensorRun, Source, TaskLabel
from .ingest import Manifest, ManifestEntry, save_manifest, write_run_csv

GRAVITY = 9.80665
RPM_RANGE = (5000.0, 35000.0)
CLOCK_JITTER_S = 1e-3


@dataclass(frozen=True)
class MotionProfile:
    """Rest-to-rest move of ``distance`` metres limited by ``v_max`` and ``accel``."""

    distance: float
    v_max: float
    accel: float

    def __post_init__(self):
        if self.distance < 0 or not self.v_max > 0 or not self.accel > 0:
            raise ContractError(f"invalid motion profile {self}")

    @property
    def triangular(self) -> bool:
        return self.distance < self.v_max**2 / self.accel

    @property
    def v_peak(self) -> float:
        if self.triangular:
            return math.sqrt(self.distance * self.accel)
        return self.v_max

    @property
    def t_ramp(self) -> float:
        return self.v_peak / self.accel

    @property
    def t_cruise(self) -> float:
        if self.triangular:
            return 0.0
        return (self.distance - self.v_max**2 / self.accel) / self.v_max

    @property
    def duration(self) -> float:
        return 2 * self.t_ramp + self.t_cruise

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        tr, T, vp = self.t_ramp, self.duration, self.v_peak
        v = np.minimum(np.minimum(self.accel * t, vp), self.accel * (T - t))
        return np.clip(v, 0.0, vp)

    def acceleration(self, t):
        t = np.asarray(t, dtype=float)
        tr, T = self.t_ramp, self.duration
        a = np.where(t < tr, self.accel, np.where(t >= T - tr, -self.accel, 0.0))
        return np.where((t < 0) | (t > T), 0.0, a)

    def position(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        tr, tc, vp, a = self.t_ramp, self.t_cruise, self.v_peak, self.accel
        up = 0.5 * a * np.minimum(t, tr) ** 2
        cruise = vp * np.clip(t - tr, 0.0, tc)
        td = np.clip(t - tr - tc, 0.0, tr)
        down = vp * td - 0.5 * a * td**2
        return up + cruise + down


def trapezoid_velocity(profile: MotionProfile, t: float) -> float:
    """Speed of ``profile`` at time ``t`` in ``[0, duration]``."""
    T = profile.duration
    if not -1e-12 <= t <= T + 1e-12:
        raise ContractError(f"t={t} outside profile duration [0, {T}]")
    return float(profile.velocity(min(max(t, 0.0), T)))


@dataclass(frozen=True)
class TaskTemplate:
    task: TaskLabel
    pass_period: float
    rpm: float
    load_level: float
    depth_schedule: tuple[float, ...]
    vibration_gain: float
    mic_gain: float
    current_idle: float
    current_load_gain: float
    stroke: float = 0.1
    v_max: float = 0.1
    accel: float = 0.5
    work_angle_deg: float = 90.0
    rock_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "task", TaskLabel.parse(self.task))
        object.__setattr__(self, "depth_schedule", tuple(float(d) for d in self.depth_schedule))
        if not RPM_RANGE[0] <= self.rpm <= RPM_RANGE[1]:
            raise ContractError(f"rpm {self.rpm} outside tool range {RPM_RANGE}")
        if not self.pass_period > 0:
            raise ContractError("pass_period must be positive")
        if not 0 <= self.load_level <= 1:
            raise ContractError("load_level must be in [0, 1]")
        if not self.depth_schedule or min(self.depth_schedule) < 0:
            raise ContractError("depth_schedule needs non-negative depths")

    @property
    def profile(self) -> MotionProfile:
        return MotionProfile(self.stroke, self.v_max, self.accel)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["task"] = self.task.name.lower()
        d["depth_schedule"] = list(self.depth_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TaskTemplate:
        return cls(**{**d, "depth_schedule": tuple(d["depth_schedule"])})


TASK_TEMPLATES: dict[TaskLabel, TaskTemplate] = {
    TaskLabel.CUTTING: TaskTemplate(
        TaskLabel.CUTTING, pass_period=4.7, rpm=23800, load_level=0.65,
        depth_schedule=(2.0, 3.0, 4.0, 5.0), vibration_gain=1.36, mic_gain=0.395,
        current_idle=0.312, current_load_gain=0.99, stroke=0.23, v_max=0.098, accel=0.46,
        work_angle_deg=77.5, rock_deg=1.94,
    ),
    TaskLabel.ENGRAVING: TaskTemplate(
        TaskLabel.ENGRAVING, pass_period=2.7, rpm=18200, load_level=0.38,
        depth_schedule=(0.5, 0.8, 1.0), vibration_gain=0.9, mic_gain=0.295,
        current_idle=0.292, current_load_gain=0.79, stroke=0.1, v_max=0.078, accel=0.52,
        work_angle_deg=62.5, rock_deg=2.94,
    ),
    TaskLabel.ROUTING: TaskTemplate(
        TaskLabel.ROUTING, pass_period=3.7, rpm=21200, load_level=0.55,
        depth_schedule=(3.0, 4.5, 6.0), vibration_gain=1.16, mic_gain=0.366,
        current_idle=0.312, current_load_gain=0.92, stroke=0.18, v_max=0.108, accel=0.56,
        work_angle_deg=72.5, rock_deg=2.18,
    ),
    TaskLabel.SANDING: TaskTemplate(
        TaskLabel.SANDING, pass_period=2.4, rpm=14800, load_level=0.45,
        depth_schedule=(0.2, 0.3), vibration_gain=1.0, mic_gain=0.324,
        current_idle=0.302, current_load_gain=0.85, stroke=0.13, v_max=0.184, accel=1.36,
        work_angle_deg=47.5, rock_deg=4.44,
    ),
}


@dataclass(frozen=True)
class StochasticityConfig:
    """Run-to-run and within-run variability.

    ``jitter_std`` is the relative std of each pass period, ``drift_std`` the
    relative std of per-pass speed/stroke plus the scale of angle wander (rad),
    ``pause_prob`` the chance of an idle pause after a pass and
    ``compliance_gain`` the depth of slow vibration/noise modulation.
    """

    mode: Source
    jitter_std: float
    drift_std: float
    pause_prob: float
    compliance_gain: float
    seed: int = 0
    noise_std: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "mode", Source(self.mode))
        for name in ("jitter_std", "drift_std", "pause_prob", "compliance_gain", "noise_std"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if self.pause_prob > 1:
            raise ContractError("pause_prob must be <= 1")
        if not 0 <= self.seed < 2**64:
            raise ContractError("seed must be an unsigned 64-bit integer")

    @classmethod
    def preset(cls, mode: Source | str, seed: int = 0) -> StochasticityConfig:
        return dataclasses.replace(PRESETS[Source(mode)], seed=seed)


PRESETS: dict[Source, StochasticityConfig] = {
    Source.ROBOT: StochasticityConfig(
        Source.ROBOT, jitter_std=0.0, drift_std=0.02, pause_prob=0.0, compliance_gain=0.3, noise_std=0.1
    ),
    Source.HUMAN: StochasticityConfig(
        Source.HUMAN, jitter_std=0.12, drift_std=0.03, pause_prob=0.1, compliance_gain=0.4, noise_std=0.1
    ),
}


def _smooth_walk(rng: np.random.Generator, n: int, rate_hz: float, scale: float, tau: float) -> np.ndarray:
    """Ornstein-Uhlenbeck path with stationary std ``scale`` and time constant ``tau`` s."""
    if scale == 0:
        return np.zeros(n)
    alpha = math.exp(-1.0 / (tau * rate_hz))
    shocks = rng.normal(0.0, scale * math.sqrt(1 - alpha**2), n)
    shocks[0] = rng.normal(0.0, scale)
    return lfilter([1.0], [1.0, -alpha], shocks)


def _pass_schedule(template: TaskTemplate, stoch: StochasticityConfig, duration: float, rng):
    """Per-pass start time, move profile, depth and load duty.

    Every pass runs in the same direction; the tool is repositioned unloaded
    in between, so the motion pattern repeats once per ``pass_period``.
    """
    starts, profiles, depths, engaged_until = [], [], [], []
    human = stoch.mode is Source.HUMAN
    dmin, dmax = min(template.depth_schedule), max(template.depth_schedule)
    tau, k = 0.0, 0
    while tau < duration:
        scale = 1.0 + stoch.drift_std * rng.standard_normal() if stoch.drift_std else 1.0
        speed = max(template.v_max * scale, 1e-3)
        stroke = template.stroke * (1.0 + stoch.drift_std * rng.standard_normal()) if stoch.drift_std else template.stroke
        prof = MotionProfile(max(stroke, 0.0), speed, template.accel)
        period = template.pass_period
        if stoch.jitter_std:
            period *= max(0.3, 1.0 + stoch.jitter_std * rng.standard_normal())
        period = max(period, prof.duration)
        if human:
            depth = rng.uniform(dmin, dmax)
        else:
            depth = template.depth_schedule[k % len(template.depth_schedule)]
        starts.append(tau)
        profiles.append(prof)
        depths.append(depth)
        engaged_until.append(tau + period)
        tau += period
        if stoch.pause_prob and rng.random() < stoch.pause_prob:
            tau += rng.uniform(1.0, 3.0)
        k += 1
    return np.array(starts), profiles, np.array(depths), np.array(engaged_until)


def generate_run(
    template: TaskTemplate,
    stoch: StochasticityConfig,
    duration: float = 180.0,
    rate_hz: float = 100.0,
    subject_id: str = "s0",
    run_index: int = 0,
    environment: np.ndarray | None = None,
) -> SensorRun:
    """Simulate one run; the output depends only on the arguments.

    ``environment`` is the ambient magnetic field (µT, 3-vector).
    """
    if not duration > 0 or not rate_hz > 0:
        raise ContractError("duration and rate_hz must be positive")
    rng = np.random.default_rng(stoch.seed)
    n = int(round(duration * rate_hz))
    t = np.arange(n) / rate_hz
    human = stoch.mode is Source.HUMAN

    starts, profiles, depths, engaged_until = _pass_schedule(template, stoch, duration, rng)
    idx = np.searchsorted(starts, t, side="right") - 1
    local = t - starts[idx]
    durations = np.array([p.duration for p in profiles])
    ramps = np.array([p.t_ramp for p in profiles])
    accels = np.array([p.accel for p in profiles])
    moving = local < durations[idx]
    in_pass = t < engaged_until[idx]

    a_motion = np.where(local < ramps[idx], accels[idx], np.where(local >= durations[idx] - ramps[idx], -accels[idx], 0.0))
    a_motion = np.where(moving, a_motion, 0.0)

    depth_frac = depths[idx] / max(template.depth_schedule)
    load = template.load_level * depth_frac * np.where(moving, 1.0, 0.25)
    load = np.where(in_pass, load, 0.0)

    compliance = 1.0 + stoch.compliance_gain * _smooth_walk(rng, n, rate_hz, 1.0, 2.0)
    compliance = np.clip(compliance, 0.0, None)
    f_tool = template.rpm / 60.0
    spinning = np.where(in_pass, 1.0, 0.6)
    vib = template.vibration_gain * (0.2 + load) * compliance * spinning
    # motor slows under load; the logger's sample clock jitters by CLOCK_JITTER_S,
    # which scrambles the phase of the (undersampled) tool-frequency tone
    f_inst = f_tool * (1.0 - 0.05 * load) * (1.0 + 0.002 * _smooth_walk(rng, n, rate_hz, 1.0, 0.5))
    rotor = 2 * np.pi * (np.cumsum(f_inst) / rate_hz + f_inst * rng.normal(0.0, CLOCK_JITTER_S, n))
    phases = rng.uniform(0, 2 * np.pi, 4)
    carrier = [np.sin(rotor + p) for p in phases]

    wander_scale = 2.0 * stoch.drift_std
    angles = np.stack([_smooth_walk(rng, n, rate_hz, wander_scale, 3.0) for _ in range(3)], axis=1)
    rock = np.deg2rad(template.rock_deg) * np.sin(np.pi * local / np.maximum(durations[idx], 1e-9))
    angles[:, 1] += np.where(moving, rock, 0.0)
    work = np.deg2rad(template.work_angle_deg)

    noise = stoch.noise_std
    out = np.empty((n, N_CHANNELS))
    out[:, ChannelId.ACCEL_X] = a_motion + 0.6 * vib * carrier[0] + GRAVITY * np.cos(work + angles[:, 1])
    out[:, ChannelId.ACCEL_Y] = 0.4 * vib * carrier[1] + GRAVITY * np.sin(angles[:, 0])
    out[:, ChannelId.ACCEL_Z] = 0.5 * vib * carrier[2] + GRAVITY * np.sin(work + angles[:, 1])
    gyro = np.gradient(angles, 1.0 / rate_hz, axis=0)
    out[:, ChannelId.GYRO_X:ChannelId.GYRO_Z + 1] = np.rad2deg(gyro)
    b0 = np.array([22.0, -4.0, 41.0]) if environment is None else np.asarray(environment, dtype=float)
    rx, ry, rz = angles[:, 0], angles[:, 1], angles[:, 2]
    out[:, ChannelId.MAG_X] = b0[0] + b0[2] * ry - b0[1] * rz
    out[:, ChannelId.MAG_Y] = b0[1] + b0[0] * rz - b0[2] * rx
    out[:, ChannelId.MAG_Z] = b0[2] + b0[1] * rx - b0[0] * ry
    envelope = 0.02 + template.mic_gain * load * compliance
    handling = 0.05 * stoch.compliance_gain * _smooth_walk(rng, n, rate_hz, 1.0, 5.0)
    out[:, ChannelId.MIC] = envelope * carrier[3] + handling
    out[:, ChannelId.CURRENT] = template.current_idle + template.current_load_gain * load

    out += rng.normal(0.0, noise, out.shape) * np.array([1, 1, 1, 2, 2, 2, 0.5, 0.5, 0.5, 0.02, 0.2])
    out[:, ChannelId.MIC] = np.clip(out[:, ChannelId.MIC], -1.0, 1.0)
    return SensorRun(t, out, rate_hz, subject_id, stoch.mode, template.task, run_index)


def perturb_template(template: TaskTemplate, rng: np.random.Generator, spread: float) -> TaskTemplate:
    """Copy of ``template`` with each coupling coefficient scaled by ``exp(N(0, spread))``."""
    if spread == 0:
        return template

    def f():
        return float(np.exp(rng.normal(0.0, spread)))

    lo, hi = RPM_RANGE
    return dataclasses.replace(
        template,
        pass_period=template.pass_period * f(),
        rpm=float(np.clip(template.rpm * f(), lo, hi)),
        load_level=float(np.clip(template.load_level * f(), 0.0, 1.0)),
        vibration_gain=template.vibration_gain * f(),
        mic_gain=template.mic_gain * f(),
        current_idle=template.current_idle * f(),
        current_load_gain=template.current_load_gain * f(),
        v_max=template.v_max * f(),
        stroke=template.stroke * f(),
        work_angle_deg=template.work_angle_deg + float(rng.normal(0.0, 25.0 * spread)),
        rock_deg=template.rock_deg * f(),
    )


@dataclass(frozen=True)
class DatasetSpec:
    """Counts of runs per (source, subject, task) and shared run settings."""

    counts: Mapping[tuple[Source, str, TaskLabel], int]
    duration: float = 180.0
    rate_hz: float = 100.0
    subject_spread: Mapping[Source, float] = field(
        default_factory=lambda: {Source.ROBOT: 0.0, Source.HUMAN: 0.05}
    )
    run_spread: Mapping[Source, float] = field(
        default_factory=lambda: {Source.ROBOT: 0.05, Source.HUMAN: 0.05}
    )
    templates: Mapping[TaskLabel, TaskTemplate] = field(default_factory=lambda: dict(TASK_TEMPLATES))
    presets: Mapping[Source, StochasticityConfig] = field(default_factory=lambda: dict(PRESETS))

    @classmethod
    def uniform(
        cls,
        human_subjects: int = 1,
        human_runs_per_task: int = 9,
        robot_subjects: int = 1,
        robot_runs_per_task: int = 8,
        **kw,
    ) -> DatasetSpec:
        counts = {}
        for source, n_subj, n_runs, prefix in (
            (Source.ROBOT, robot_subjects, robot_runs_per_task, "robot"),
            (Source.HUMAN, human_subjects, human_runs_per_task, "human"),
        ):
            for s in range(n_subj):
                for task in TaskLabel:
                    counts[(source, f"{prefix}{s:02d}", task)] = n_runs
        return cls(counts=counts, **kw)

    def to_dict(self) -> dict:
        return {
            "counts": [[s.value, subj, t.name.lower(), n] for (s, subj, t), n in self.counts.items()],
            "duration": self.duration,
            "rate_hz": self.rate_hz,
            "subject_spread": {s.value: v for s, v in self.subject_spread.items()},
            "run_spread": {s.value: v for s, v in self.run_spread.items()},
            "templates": {t.name.lower(): tpl.to_dict() for t, tpl in self.templates.items()},
            "presets": {
                s.value: {k: v for k, v in dataclasses.asdict(p).items() if k not in ("mode", "seed")}
                for s, p in self.presets.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> DatasetSpec:
        counts = {(Source(s), str(subj), TaskLabel.parse(t)): int(n) for s, subj, t, n in d["counts"]}
        kw = {}
        if "subject_spread" in d:
            kw["subject_spread"] = {Source(k): float(v) for k, v in d["subject_spread"].items()}
        if "run_spread" in d:
            kw["run_spread"] = {Source(k): float(v) for k, v in d["run_spread"].items()}
        if "templates" in d:
            kw["templates"] = {TaskLabel.parse(k): TaskTemplate.from_dict(v) for k, v in d["templates"].items()}
        if "presets" in d:
            kw["presets"] = {Source(k): StochasticityConfig(mode=Source(k), **v) for k, v in d["presets"].items()}
        return cls(counts=counts, duration=float(d.get("duration", 180.0)), rate_hz=float(d.get("rate_hz", 100.0)), **kw)


def _seed_for(seed: int, *parts) -> np.random.SeedSequence:
    key = tuple(zlib.crc32(str(p).encode()) for p in parts)
    return np.random.SeedSequence(seed, spawn_key=key)


def subject_setup(spec: DatasetSpec, source: Source, subject: str, seed: int):
    """Per-subject perturbed templates and ambient field."""
    rng = np.random.default_rng(_seed_for(seed, source.value, subject, "subject"))
    spread = spec.subject_spread.get(source, 0.0)
    templates = {task: perturb_template(tpl, rng, spread) for task, tpl in spec.templates.items()}
    env = np.array([22.0, -4.0, 41.0]) + rng.normal(0.0, 10.0 * spread, 3)
    return templates, env


def generate_dataset(spec: DatasetSpec, seed: int = 0) -> tuple[list[SensorRun], Manifest]:
    """Generate every run in ``spec.counts``; run paths are ``runs/<...>.csv``."""
    runs, entries = [], []
    setups = {}
    for (source, subject, task), count in spec.counts.items():
        if count < 0:
            raise ContractError(f"negative run count for {(source, subject, task)}")
        source = Source(source)
        task = TaskLabel.parse(task)
        if (source, subject) not in setups:
            setups[(source, subject)] = subject_setup(spec, source, subject, seed)
        templates, env = setups[(source, subject)]
        for i in range(count):
            seq = _seed_for(seed, source.value, subject, task.name, i)
            run_seed = int(seq.generate_state(2, np.uint32).view(np.uint64)[0])
            template = perturb_template(templates[task], np.random.default_rng(seq.spawn(1)[0]), spec.run_spread.get(source, 0.0))
            stoch = dataclasses.replace(spec.presets[source], seed=run_seed)
            run = generate_run(template, stoch, spec.duration, spec.rate_hz, subject, i, environment=env)
            runs.append(run)
            entries.append(
                ManifestEntry(
                    path=f"runs/{source.value}_{subject}_{task.name.lower()}_{i:02d}.csv",
                    subject_id=subject,
                    source=source,
                    task=task,
                    run_index=i,
                    rate_hz=spec.rate_hz,
                )
            )
    return runs, Manifest(tuple(entries))


def write_dataset(runs: list[SensorRun], manifest: Manifest, out_dir: str | Path, name: str = "dataset") -> Path:
    """Write run CSVs next to ``<name>.manifest.json`` in ``out_dir``."""
    out_dir = Path(out_dir)
    for run, entry in zip(runs, manifest.entries):
        write_run_csv(run, out_dir / entry.path)
    path = out_dir / f"{name}.manifest.json"
    save_manifest(manifest, path)
    return path
