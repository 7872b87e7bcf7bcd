"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from conftest import record
from oracles import naive_stats, type7_quantile
from test_model import finite_difference_error
from toolsense.cli import ECHO_NAME, main
from toolsense.core import SensorRun, Source, TaskLabel
from toolsense.evaluation import build_splits, distribution_report, quartiles, split_table, window_mean_variance
from toolsense.experiment import subject_experiment, transfer_experiment, transfer_gaps
from toolsense.features import apply_normalization, channel_statistics, fit_normalization, make_windows
from toolsense.ingest import DataError, ParseError, SchemaError, format_run_csv, parse_run_csv
from toolsense.model import MlpParams
from toolsense.synth import DatasetSpec, generate_dataset

LENGTHS = (1, 2, 3, 4, 5, 100, 1000)
TRANSFER_SEEDS = range(20)


def test_criterion_1_feature_oracle():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst, degenerate_ok, checked = 0.0, True, 0
    for i in range(1000):
        n = LENGTHS[i % len(LENGTHS)]
        if i % 10 == 9:
            x = np.full(n, rng.normal(0, 100))
        else:
            x = rng.normal(rng.uniform(-50, 50), rng.uniform(0.01, 20), n)
        got = channel_statistics(x[:, None]).ravel()
        want = naive_stats(x.tolist())
        for g, w in zip(got, want):
            worst = max(worst, abs(g - w) / max(1.0, abs(w)))
        checked += 1
        if n < 3 or np.ptp(x) == 0:
            degenerate_ok &= got[7] == 0.0
        if n < 4 or np.ptp(x) == 0:
            degenerate_ok &= got[8] == 0.0
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and degenerate_ok and elapsed < 10
    record(1, "feature oracle suite", ok, f"{checked} windows, max rel err {worst:.1e}, {elapsed:.2f} s")
    assert ok


def test_criterion_2_window_arithmetic():
    start = time.perf_counter()
    n = 180 * 100
    run = SensorRun(np.arange(n) / 100.0, np.zeros((n, 11)), 100.0, "s", Source.ROBOT, TaskLabel.CUTTING, 0)
    windows = make_windows(run, 10.0, 0.5)
    size, hop = 1000, 500
    enumerated = [(s, s + size) for s in range(0, n) if s + size <= n and s % hop == 0]
    got = [(w.start_index, w.end_index) for w in windows]
    elapsed = time.perf_counter() - start
    ok = len(windows) == 35 and got == enumerated and elapsed < 1
    record(2, "window arithmetic", ok, f"{len(windows)} windows, {elapsed * 1000:.1f} ms")
    assert ok


def test_criterion_3_gradient_check():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst = 0.0
    for b in range(20):
        p = MlpParams.glorot((6, 5, 4), b)
        x, y = rng.normal(size=(8, 6)), rng.integers(0, 4, 8)
        worst = max(worst, finite_difference_error(p, x, y, step=1e-5))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 10
    record(3, "gradient check", ok, f"20 batches, max rel err {worst:.1e}, {elapsed:.2f} s")
    assert ok


def test_criterion_4_normalization_contract(small_table):
    table = small_table.where(lambda r: r.source is Source.HUMAN)
    train, _, test = split_table(table, build_splits(table.rows))
    x = train.x.copy()
    x[:, 5] = 3.25  # one constant feature
    norm = fit_normalization(x)
    z = apply_normalization(x, norm)
    failures = []
    for j in range(x.shape[1]):
        col = z[:, j]
        if not (np.all(col >= 0) and np.all(col <= 1)):
            failures.append(f"feature {j} outside [0,1]")
        if np.ptp(x[:, j]) == 0:
            if not np.all(col == 0):
                failures.append(f"constant feature {j} not 0")
        elif col.min() != 0.0 or col.max() != 1.0:
            failures.append(f"feature {j} does not attain 0 and 1")
    span = norm.max - norm.min
    shifted = np.vstack([test.x, norm.min - span - 1, norm.max + span + 1])
    zt = apply_normalization(shifted, norm)
    flat = span == 0
    if not (np.all(zt >= 0) and np.all(zt <= 1)):
        failures.append("test values not clamped")
    if not (np.all(zt[-2, ~flat] == 0) and np.all(zt[-1, ~flat] == 1)):
        failures.append("out-of-range values not clamped to the bounds")
    ok = not failures
    record(4, "normalization contract", ok, f"{x.shape[0]} train windows x {x.shape[1]} features; " + ("; ".join(failures[:3]) or "exhaustive"))
    assert ok, failures


@pytest.mark.slow
def test_criterion_5_transfer_experiment():
    start = time.perf_counter()
    gaps = [transfer_gaps(transfer_experiment(seed)) for seed in TRANSFER_SEEDS]
    elapsed = time.perf_counter() - start
    g10 = float(np.mean([g[0.1] for g in gaps]))
    g100 = float(np.mean([g[1.0] for g in gaps]))
    ok = g10 >= 0.05 and abs(g100) <= 0.05 and elapsed < 300
    record(5, "end-to-end transfer experiment", ok,
           f"{len(gaps)} seeds, gap@10% {100 * g10:+.1f} pts, gap@100% {100 * g100:+.1f} pts, {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_6_subject_protocol():
    start = time.perf_counter()
    rows = subject_experiment(seed=0, human_subjects=4)
    elapsed = time.perf_counter() - start
    id_ft = float(np.mean([r.id_fine_tuned for r in rows]))
    ood_ft = float(np.mean([r.ood_fine_tuned for r in rows]))
    boost = float(np.mean([(r.id_boost + r.ood_boost) / 2 for r in rows]))
    ok = len(rows) >= 4 and id_ft >= ood_ft and boost > 0 and elapsed < 300
    record(6, "subject protocol", ok,
           f"{len(rows)} subjects, ID ft {id_ft:.3f} vs OoD ft {ood_ft:.3f}, mean boost {boost:+.3f}, {elapsed:.0f} s")
    assert ok


def test_criterion_7_distribution_report(rng):
    counts = {}
    for task in TaskLabel:
        counts[(Source.ROBOT, "robot00", task)] = 30
        for s in range(3):
            counts[(Source.HUMAN, f"human{s:02d}", task)] = 10
    runs, _ = generate_dataset(DatasetSpec(counts=counts), seed=0)
    worst_ratio = 0.0
    for task in TaskLabel:
        robot = window_mean_variance([r for r in runs if r.task is task and r.source is Source.ROBOT])
        human = window_mean_variance([r for r in runs if r.task is task and r.source is Source.HUMAN])
        worst_ratio = max(worst_ratio, float(np.max(robot / human)))
    variance_ok = worst_ratio <= 1.0

    quartile_err = 0.0
    for _ in range(1000):
        x = rng.normal(size=int(rng.integers(1, 200))) * rng.uniform(0.01, 1000)
        for g, q in zip(quartiles(x), (0.25, 0.5, 0.75)):
            want = type7_quantile(x.tolist(), q)
            quartile_err = max(quartile_err, abs(g - want) / max(1.0, abs(want)))

    human = [r for r in runs if r.source is Source.HUMAN][:8]
    twins = human + [SensorRun(r.t, r.values, r.rate_hz, r.subject_id, Source.ROBOT, r.task, r.run_index) for r in human]
    overlaps = set(distribution_report(twins).overlap.values())
    ok = variance_ok and quartile_err <= 1e-9 and overlaps == {1.0}
    record(7, "distribution report", ok,
           f"30 runs/mode/task, max robot/human variance ratio {worst_ratio:.3f}, quartile err {quartile_err:.1e}, twin overlap {sorted(overlaps)}")
    assert ok


def test_criterion_8_determinism(tmp_path):
    def write(name, obj):
        (tmp_path / name).write_text(json.dumps(obj))
        return str(tmp_path / name)

    gen = write("gen.json", {"human_subjects": 2, "human_runs_per_task": 3, "robot_runs_per_task": 3, "duration": 40.0})
    fast = write("fast.json", {"epochs": 8, "patience": 4})
    d = {name: tmp_path / name for name in
         ("generate", "ingest", "featurize", "train", "finetune", "evaluate", "sweep", "subjects", "compare-dist")}
    manifest = str(d["generate"] / "dataset.manifest.json")
    feat = ["--features", str(d["featurize"] / "features.csv"), "--normalization", str(d["featurize"] / "normalization.json")]
    ckpt = ["--checkpoint", str(d["train"] / "checkpoint.ckpt")]
    argv = {
        "generate": ["--config", gen, "--seed", "5"],
        "ingest": ["--manifest", manifest],
        "featurize": ["--manifest", manifest],
        "train": ["--config", fast, *feat],
        "finetune": ["--config", fast, *ckpt, *feat, "--fraction", "0.5"],
        "evaluate": [*ckpt, *feat],
        "sweep": ["--config", fast, *ckpt, *feat, "--fractions", "0.5,1.0", "--seeds", "0,1"],
        "subjects": ["--config", fast, *ckpt, *feat, "--seeds", "0"],
        "compare-dist": ["--manifest", manifest],
    }
    mismatches, compared = [], 0
    for name, args in argv.items():
        assert main([name, *args, "--out", str(d[name])]) == 0, name
    for name, first in d.items():
        again = tmp_path / f"rerun-{name}"
        assert main([name, "--config", str(first / ECHO_NAME), "--out", str(again)]) == 0, name
        files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
        if files != sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file()):
            mismatches.append(f"{name}: file sets differ")
        for f in files:
            compared += 1
            if (again / f).read_bytes() != (first / f).read_bytes():
                mismatches.append(f"{name}/{f}")
    ok = not mismatches
    record(8, "determinism and provenance", ok,
           f"{len(argv)} stages, {compared} files byte-identical" if ok else ", ".join(mismatches[:5]))
    assert ok, mismatches


def test_criterion_9_ingestion_robustness(tmp_path, capsys):
    runs, manifest = generate_dataset(DatasetSpec.uniform(human_subjects=1, human_runs_per_task=1,
                                                          robot_runs_per_task=1, duration=20.0), seed=2)
    failures = []
    for run, entry in zip(runs, manifest):
        path = tmp_path / entry.path
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_run_csv(run))
        back = parse_run_csv(path, entry)
        if back.values.shape != run.values.shape:
            failures.append(f"round trip changed {entry.path}")

    good = format_run_csv(runs[0]).splitlines()
    header, rows = good[0].split(","), [l.split(",") for l in good[1:]]
    drop = header.index("gyro_y")
    missing = [",".join(c for i, c in enumerate(r) if i != drop) for r in [header] + rows]
    nonnumeric = [good[0]] + [",".join(["abc" if (i, j) == (3, 4) else c for j, c in enumerate(r)]) for i, r in enumerate(rows)]
    nonmono = [good[0]] + [",".join(r) for r in rows]
    nonmono[8], nonmono[9] = nonmono[9], nonmono[8]
    cases = [("missing column", missing, SchemaError, "gyro_y"),
             ("non-numeric cell", nonnumeric, ParseError, "row 4"),
             ("non-monotone time", nonmono, DataError, "row 9")]
    entry = manifest.entries[0]
    for label, lines, err, needle in cases:
        path = tmp_path / f"{label.replace(' ', '_')}.csv"
        path.write_text("\n".join(lines) + "\n")
        try:
            parse_run_csv(path, entry)
            failures.append(f"{label}: accepted")
        except err as exc:
            if needle not in str(exc):
                failures.append(f"{label}: message {exc} lacks {needle!r}")
        except Exception as exc:  # noqa: BLE001 - any other type is a contract breach
            failures.append(f"{label}: {type(exc).__name__} instead of {err.__name__}")
        bad_manifest = tmp_path / f"{path.stem}.manifest.json"
        bad_manifest.write_text(json.dumps([{**entry.to_dict(), "path": str(path)}]))
        code = main(["ingest", "--manifest", str(bad_manifest), "--out", str(tmp_path / "o")])
        err_line = [l for l in capsys.readouterr().err.splitlines() if l.startswith("{")]
        if code != 1 or len(err_line) != 1 or json.loads(err_line[0])["error"] != err.__name__:
            failures.append(f"{label}: CLI did not report {err.__name__}")
    ok = not failures
    record(9, "ingestion robustness", ok,
           f"{len(runs)} generated runs round-tripped, 3 malformed cases named" if ok else "; ".join(failures))
    assert ok, failures
