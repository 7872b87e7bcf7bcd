import json

import numpy as np
import pytest

from toolsense.core import (
    CHANNEL_NAMES,
    FEATURE_NAMES,
    N_FEATURES,
    ChannelId,
    ContractError,
    RunKey,
    SensorRun,
    SensorSample,
    Source,
    SplitMode,
    SplitSpec,
    Stat,
    TaskLabel,
    Window,
    feature_index,
)


def make_run(n=50, rate=100.0, **kw):
    t = np.arange(n) / rate
    values = np.zeros((n, 11))
    meta = dict(rate_hz=rate, subject_id="s", source="robot", task="routing", run_index=0)
    meta.update(kw)
    return SensorRun(t, values, **meta)


def test_enum_layout_is_frozen():
    assert CHANNEL_NAMES == ("accel_x", "accel_y", "accel_z", "gyro_x", "gyro_y", "gyro_z",
                             "mag_x", "mag_y", "mag_z", "mic", "current")
    assert [t.name.lower() for t in TaskLabel] == ["cutting", "engraving", "routing", "sanding"]
    assert [int(t) for t in TaskLabel] == [0, 1, 2, 3]
    assert {s.value for s in Source} == {"human", "robot"}
    assert [s.name.lower() for s in Stat] == ["min", "max", "mean", "sum", "variance", "std_dev",
                                              "sem", "skewness", "kurtosis", "mad"]


@pytest.mark.parametrize("channel, stat, index", [
    (ChannelId.ACCEL_X, Stat.MIN, 0),
    (ChannelId.CURRENT, Stat.MAD, 109),
    (ChannelId.GYRO_Y, Stat.MEAN, 42),
])
def test_feature_index_examples(channel, stat, index):
    assert feature_index(channel, stat) == index


def test_feature_index_matches_enumerated_layout():
    table = [(c, s) for c in range(11) for s in range(10)]
    assert table[42] == (4, 2)
    image = [feature_index(c, s) for c, s in table]
    assert image == list(range(N_FEATURES))
    assert FEATURE_NAMES[42] == "gyro_y_mean"


@pytest.mark.parametrize("channel, stat", [(0, 10), (0, -1), (11, 0)])
def test_feature_index_out_of_range(channel, stat):
    with pytest.raises(ContractError):
        feature_index(channel, stat)


def test_enum_ordinals_round_trip_through_json():
    for label in TaskLabel:
        assert TaskLabel.parse(json.loads(json.dumps(int(label)))) is label
        assert TaskLabel.parse(label.name.lower()) is label
    for ch in ChannelId:
        assert ChannelId(json.loads(json.dumps(int(ch)))) is ch
    for src in Source:
        assert Source(json.loads(json.dumps(src.value))) is src


def test_sensor_sample_validates():
    SensorSample(0.0, tuple(range(11)))
    with pytest.raises(ContractError):
        SensorSample(0.0, (1.0,) * 10)
    with pytest.raises(ContractError):
        SensorSample(0.0, (float("nan"),) * 11)


def test_sensor_run_invariants():
    run = make_run()
    assert len(run) == 50 and run.duration == pytest.approx(0.5)
    assert run.key == RunKey("s", TaskLabel.ROUTING, 0)
    assert run.run_ref == "robot/s/routing/0"
    assert run.sample(3).t == pytest.approx(0.03)
    assert len(list(run)) == 50
    with pytest.raises(ValueError):
        run.values[0, 0] = 1.0


def test_sensor_run_rejects_bad_timing():
    with pytest.raises(ContractError):
        make_run(n=0)
    t = np.arange(10) / 100.0
    t[5] = t[4]
    with pytest.raises(ContractError):
        SensorRun(t, np.zeros((10, 11)), 100.0, "s", "human", 0, 0)
    with pytest.raises(ContractError):
        SensorRun(np.arange(10) / 50.0, np.zeros((10, 11)), 100.0, "s", "human", 0, 0)
    vals = np.zeros((10, 11))
    vals[2, 3] = np.inf
    with pytest.raises(ContractError):
        SensorRun(np.arange(10) / 100.0, vals, 100.0, "s", "human", 0, 0)


def test_window_slice_checks_parent():
    run = make_run()
    w = Window(run.run_ref, 10, 20, TaskLabel.ROUTING, "s", Source.ROBOT)
    assert w.length == 10 and w.slice(run).shape == (10, 11)
    other = make_run(run_index=1)
    with pytest.raises(ContractError):
        w.slice(other)


def test_split_spec_disjoint_and_ood():
    a = RunKey("s1", TaskLabel.CUTTING, 0)
    b = RunKey("s1", TaskLabel.CUTTING, 1)
    c = RunKey("s2", TaskLabel.CUTTING, 0)
    with pytest.raises(ContractError):
        SplitSpec(frozenset({a}), frozenset({a}), frozenset())
    with pytest.raises(ContractError):
        SplitSpec(frozenset({a}), frozenset(), frozenset({c}), SplitMode.OUT_OF_DISTRIBUTION, "s1")
    spec = SplitSpec(frozenset({c}), frozenset(), frozenset({a, b}), SplitMode.OUT_OF_DISTRIBUTION, "s1")
    assert spec.assignment(a) == "test" and spec.assignment(c) == "train"
    assert spec.assignment(("zz", 0, 0)) is None
    assert SplitSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
