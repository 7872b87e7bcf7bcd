"""End-to-end recipes: data pools, robot pretraining and the two transfer experiments.

The robot model is pretrained on the robot train and test runs and early-stopped
on the robot validation runs. Normalization is fitted on robot pretraining
windows plus human training windows, so both regimes see the same scaling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Source, SplitSpec
from .evaluation import (
    ExperimentData,
    Regime,
    SubjectRow,
    SweepRow,
    build_splits,
    fraction_sweep,
    split_table,
    subject_protocol,
    sweep_means,
)
from .features import FeatureTable, NormalizationParams, apply_normalization, featurize_runs, fit_normalization
from .model import TrainConfig, TrainResult, train
from .synth import DatasetSpec, generate_dataset


@dataclass
class Pools:
    robot_train: FeatureTable
    robot_val: FeatureTable
    human_train: FeatureTable
    human_val: FeatureTable
    human_test: FeatureTable
    robot_split: SplitSpec
    human_split: SplitSpec

    @property
    def human(self) -> FeatureTable:
        return FeatureTable.concat([self.human_train, self.human_val, self.human_test])


def make_pools(table: FeatureTable) -> Pools:
    robot = table.where(lambda r: r.source is Source.ROBOT)
    human = table.where(lambda r: r.source is Source.HUMAN)
    rs = build_splits(robot.rows)
    hs = build_splits(human.rows)
    r_train, r_val, r_test = split_table(robot, rs)
    h_train, h_val, h_test = split_table(human, hs)
    return Pools(FeatureTable.concat([r_train, r_test]), r_val, h_train, h_val, h_test, rs, hs)


def fit_pool_normalization(pools: Pools) -> NormalizationParams:
    return fit_normalization(np.concatenate([pools.robot_train.x, pools.human_train.x]), "robot_pretrain+human_train")


def pretrain(pools: Pools, norm: NormalizationParams, config: TrainConfig = TrainConfig()) -> TrainResult:
    return train(
        apply_normalization(pools.robot_train.x, norm), pools.robot_train.y,
        apply_normalization(pools.robot_val.x, norm), pools.robot_val.y,
        config,
    )


def human_data(pools: Pools, norm: NormalizationParams) -> ExperimentData:
    return ExperimentData.from_tables(pools.human_train, pools.human_val, pools.human_test, norm, pools.human_split)


def prepare(spec: DatasetSpec, seed: int, config: TrainConfig = TrainConfig()):
    """Generate, featurize and pretrain; returns ``(pools, norm, pretrain_result)``."""
    runs, _ = generate_dataset(spec, seed)
    table, _ = featurize_runs(runs)
    pools = make_pools(table)
    norm = fit_pool_normalization(pools)
    cfg = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
    return pools, norm, pretrain(pools, norm, cfg)


def transfer_experiment(
    seed: int,
    fractions: Sequence[float] = (0.1, 1.0),
    spec: DatasetSpec | None = None,
    config: TrainConfig = TrainConfig(),
) -> list[SweepRow]:
    """One seed drives the dataset, the robot pretraining and the sweep."""
    spec = spec or DatasetSpec.uniform()
    pools, norm, res = prepare(spec, seed, config)
    rows, _ = fraction_sweep(human_data(pools, norm), res.params, fractions, seeds=[seed], config=config)
    return rows


def transfer_gaps(rows: Sequence[SweepRow]) -> dict[float, float]:
    """Fine-tuned minus zero-shot mean accuracy per fraction."""
    m = sweep_means(rows)
    fractions = sorted({f for f, _ in m})
    return {f: m[(f, Regime.FINE_TUNED)] - m[(f, Regime.ZERO_SHOT)] for f in fractions
            if (f, Regime.FINE_TUNED) in m and (f, Regime.ZERO_SHOT) in m}


def subject_experiment(
    seed: int,
    human_subjects: int = 4,
    fraction: float = 0.1,
    seeds: Sequence[int] = (0, 1, 2),
    config: TrainConfig = TrainConfig(),
) -> list[SubjectRow]:
    spec = DatasetSpec.uniform(human_subjects=human_subjects)
    pools, norm, res = prepare(spec, seed, config)
    return subject_protocol(pools.human, res.params, norm, seeds, config, fraction)
