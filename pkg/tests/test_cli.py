import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from toolsense.cli import ECHO_NAME, main

SMALL_GEN = {"human_subjects": 2, "human_runs_per_task": 3, "robot_runs_per_task": 3, "duration": 40.0}
FAST_TRAIN = {"epochs": 8, "patience": 4}


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    err = capsys.readouterr().err if capsys else ""
    return code, err


def write_config(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """generate -> featurize -> train on a small dataset; returns the output directories."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "gen.json", SMALL_GEN)
    assert main(["generate", "--config", str(cfg), "--seed", "3", "--out", str(root / "gen")]) == 0
    manifest = root / "gen" / "dataset.manifest.json"
    assert main(["featurize", "--manifest", str(manifest), "--out", str(root / "feat")]) == 0
    tcfg = write_config(root / "train.json", FAST_TRAIN)
    feat = ["--features", str(root / "feat" / "features.csv"), "--normalization", str(root / "feat" / "normalization.json")]
    assert main(["train", "--config", str(tcfg), *feat, "--out", str(root / "robot")]) == 0
    return root, manifest, feat


def test_generate_then_ingest_round_trip(pipeline, tmp_path):
    root, manifest, _ = pipeline
    assert main(["ingest", "--manifest", str(manifest), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "ingest_summary.json").read_text())
    assert summary["runs"] == 4 * (2 * 3 + 3)
    assert summary["runs_by_source"] == {"human": 24, "robot": 12}
    assert summary["duration_s"]["min"] == 40.0
    assert set(summary["cleaning"]) == {"human", "robot"}


def test_outputs_and_echo(pipeline):
    root, _, _ = pipeline
    for d, files in [("gen", ["dataset.manifest.json"]), ("feat", ["features.csv", "normalization.json", "cleaning.json"]),
                     ("robot", ["checkpoint.ckpt", "train_log.csv", "split.json"])]:
        for f in files + [ECHO_NAME]:
            assert (root / d / f).is_file(), (d, f)
    echo = json.loads((root / "gen" / ECHO_NAME).read_text())
    assert echo["command"] == "generate" and echo["seed"] == 3 and echo["duration"] == 40.0
    echo = json.loads((root / "robot" / ECHO_NAME).read_text())
    assert echo["epochs"] == 8 and echo["source"] == "robot"
    assert not list(root.rglob("*.tmp"))


def test_train_twice_identical_bytes(pipeline, tmp_path):
    root, _, feat = pipeline
    cfg = write_config(tmp_path / "t.json", FAST_TRAIN)
    assert main(["train", "--config", str(cfg), *feat, "--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "checkpoint.ckpt").read_bytes() == (root / "robot" / "checkpoint.ckpt").read_bytes()


def test_every_stage_reruns_from_echo(pipeline, tmp_path):
    root, manifest, feat = pipeline
    ckpt = str(root / "robot" / "checkpoint.ckpt")
    fast = write_config(tmp_path / "fast.json", FAST_TRAIN)
    stages = {
        "ingest": ["ingest", "--manifest", manifest],
        "finetune": ["finetune", "--config", fast, "--checkpoint", ckpt, *feat, "--fraction", "0.5"],
        "evaluate": ["evaluate", "--checkpoint", ckpt, *feat, "--split", "val"],
        "sweep": ["sweep", "--config", fast, "--checkpoint", ckpt, *feat, "--fractions", "0.5,1.0", "--seeds", "0"],
        "subjects": ["subjects", "--config", fast, "--checkpoint", ckpt, *feat, "--seeds", "0"],
        "compare-dist": ["compare-dist", "--manifest", manifest],
    }
    dirs = {"generate": root / "gen", "featurize": root / "feat", "train": root / "robot"}
    for name, argv in stages.items():
        dirs[name] = tmp_path / name
        assert main([str(a) for a in argv] + ["--out", str(dirs[name])]) == 0, name
    for name, first in dirs.items():
        again = tmp_path / f"re-{name}"
        assert main([name, "--config", str(first / ECHO_NAME), "--out", str(again)]) == 0, name
        files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
        for f in files:
            assert (first / f).read_bytes() == (again / f).read_bytes(), (name, f)


def test_svg_outputs_are_well_formed(pipeline, tmp_path):
    root, manifest, feat = pipeline
    ckpt = str(root / "robot" / "checkpoint.ckpt")
    assert main(["sweep", "--checkpoint", ckpt, *feat, "--fractions", "0.5,1", "--seeds", "0",
                 "--epochs", "3", "--out", str(tmp_path / "s")]) == 0
    assert main(["compare-dist", "--manifest", str(manifest), "--out", str(tmp_path / "d")]) == 0
    for svg in (tmp_path / "s" / "sweep.svg", tmp_path / "d" / "boxplot.svg"):
        root_el = ET.fromstring(svg.read_text())
        assert root_el.tag.endswith("svg")
    header = (tmp_path / "d" / "distribution.csv").read_text().splitlines()[0]
    assert header.startswith("channel,source,q1,median,q3")


def error_of(err):
    lines = [l for l in err.splitlines() if l.startswith("{")]
    assert len(lines) == 1
    return json.loads(lines[0])


def test_missing_file_is_one_line_error(tmp_path, capsys):
    code, err = run(["ingest", "--manifest", tmp_path / "nope.manifest.json", "--out", tmp_path / "o"], capsys)
    assert code == 1
    e = error_of(err)
    assert e == {"command": "ingest", "error": "FileNotFoundError", "message": e["message"]}
    assert "nope.manifest.json" in e["message"]


def test_malformed_csv_surfaces_named_error(pipeline, tmp_path, capsys):
    root, manifest, _ = pipeline
    data = json.loads(manifest.read_text())[:1]
    src = root / "gen" / data[0]["path"]
    lines = src.read_text().splitlines()
    lines[0] = lines[0].replace(",mic", "")
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(l if i == 0 else ",".join(l.split(",")[:10] + l.split(",")[11:]) for i, l in enumerate(lines)) + "\n")
    data[0]["path"] = str(bad)
    m = write_config(tmp_path / "bad.manifest.json", data)
    code, err = run(["ingest", "--manifest", m, "--out", tmp_path / "o"], capsys)
    e = error_of(err)
    assert code == 1 and e["error"] == "SchemaError" and "'mic'" in e["message"]


def test_config_errors(tmp_path, capsys):
    bad = write_config(tmp_path / "c.json", {"no_such_key": 1})
    code, err = run(["generate", "--config", bad, "--out", tmp_path / "o"], capsys)
    assert code == 1 and error_of(err)["error"] == "ConfigError"
    wrong = write_config(tmp_path / "w.json", {"command": "train"})
    code, err = run(["generate", "--config", wrong, "--out", tmp_path / "o"], capsys)
    assert code == 1 and "train" in error_of(err)["message"]
    code, err = run(["train", "--out", tmp_path / "o"], capsys)
    assert code == 1 and "features" in error_of(err)["message"]


def test_module_entry_point_and_log_env(tmp_path):
    env_run = subprocess.run(
        [sys.executable, "-m", "toolsense", "generate", "--out", str(tmp_path), "--human-subjects", "1",
         "--human-runs-per-task", "1", "--robot-runs-per-task", "1", "--duration", "12"],
        capture_output=True, text=True, env={"TOOLSENSE_LOG": "INFO", "PATH": ""},
    )
    assert env_run.returncode == 0, env_run.stderr
    assert "wrote 8 runs" in env_run.stderr
    assert len(list((tmp_path / "runs").glob("*.csv"))) == 8
