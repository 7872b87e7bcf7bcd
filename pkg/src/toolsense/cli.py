"""``toolsense`` command line: every pipeline stage as a subcommand.

Parameters come from built-in defaults, then ``--config`` (JSON), then flags.
The merged set is echoed to ``<out>/config.echo.json``; passing that file back
with ``--config`` reproduces the stage's outputs byte for byte. Failures print
a single JSON line ``{"command", "error", "message"}`` to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from ._io import atomic_write_json, atomic_write_text
from .core import Source
from .evaluation import (
    DEFAULT_FRACTIONS,
    ExperimentData,
    build_splits,
    distribution_report,
    evaluate,
    format_distribution_csv,
    format_subjects_csv,
    format_sweep_csv,
    fraction_sweep,
    split_table,
    stratified_nested_subsets,
    subject_protocol,
    sweep_means,
)
from .experiment import fit_pool_normalization, make_pools
from .features import NormalizationParams, apply_normalization, featurize_runs, read_feature_csv, write_feature_csv
from .ingest import load_manifest, load_runs
from .model import TrainConfig, load_checkpoint, save_checkpoint, train
from .plots import boxplot_svg, sweep_svg
from .synth import DatasetSpec, generate_dataset, write_dataset

log = logging.getLogger("toolsense")

ECHO_NAME = "config.echo.json"
LOG_ENV = "TOOLSENSE_LOG"


class ConfigError(ValueError):
    pass


_WINDOW = {"window_seconds": 10.0, "overlap_fraction": 0.5, "clean_k": 3.5}
_TRAIN = {k: v for k, v in TrainConfig().to_dict().items() if k != "seed"}

DEFAULTS: dict[str, dict] = {
    "generate": {
        "human_subjects": 1, "human_runs_per_task": 9, "robot_subjects": 1, "robot_runs_per_task": 8,
        "duration": 180.0, "rate_hz": 100.0, "dataset": None,
    },
    "ingest": {"manifest": None, **_WINDOW},
    "featurize": {"manifest": None, **_WINDOW},
    "train": {"features": None, "normalization": None, "source": "robot", "init": None, **_TRAIN},
    "finetune": {"checkpoint": None, "features": None, "normalization": None, "fraction": 1.0, **_TRAIN},
    "evaluate": {"checkpoint": None, "features": None, "normalization": None, "source": "human", "split": "test"},
    "sweep": {"checkpoint": None, "features": None, "normalization": None,
              "fractions": list(DEFAULT_FRACTIONS), "seeds": None, **_TRAIN},
    "subjects": {"checkpoint": None, "features": None, "normalization": None,
                 "fraction": 1.0, "seeds": None, **_TRAIN},
    "compare-dist": {"manifest": None, "window_seconds": 10.0, "overlap_fraction": 0.5},
}
PATH_KEYS = ("manifest", "features", "normalization", "checkpoint", "init")
REQUIRED = {
    "ingest": ("manifest",),
    "featurize": ("manifest",),
    "train": ("features", "normalization"),
    "finetune": ("checkpoint", "features", "normalization"),
    "evaluate": ("checkpoint", "features", "normalization"),
    "sweep": ("checkpoint", "features", "normalization"),
    "subjects": ("checkpoint", "features", "normalization"),
    "compare-dist": ("manifest",),
}


# ---------------------------------------------------------------- config


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags."""
    params = {"seed": 0, "jobs": 1, **DEFAULTS[command]}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: malformed JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        other = loaded.pop("command", command)
        if other != command:
            raise ConfigError(f"{args.config}: config is for {other!r}, not {command!r}")
        unknown = sorted(set(loaded) - set(params))
        if unknown:
            raise ConfigError(f"{args.config}: unknown key {unknown[0]!r} for {command!r}")
        params.update(loaded)
    for key in params:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            params[key] = flag
    for key in REQUIRED.get(command, ()):
        if params.get(key) is None:
            raise ConfigError(f"missing required parameter {key!r} (flag --{key.replace('_', '-')})")
    for key in PATH_KEYS:
        if params.get(key) is not None:
            p = Path(params[key]).resolve()
            if not p.exists():
                raise FileNotFoundError(f"{key}: no such file {str(p)!r}")
            params[key] = str(p)
    if "seeds" in params and params["seeds"] is None:
        params["seeds"] = list(range(params["seed"], params["seed"] + 5))
    if int(params["jobs"]) < 1:
        raise ConfigError("jobs must be >= 1")
    return params


def _train_config(params: dict) -> TrainConfig:
    return TrainConfig.from_dict({k: params[k] for k in _TRAIN} | {"seed": params["seed"]})


def _load_features(params: dict):
    table = read_feature_csv(params["features"])
    norm = NormalizationParams.load(params["normalization"])
    return table, norm


def _source_pools(table, source: Source):
    pools = make_pools(table)
    if source is Source.ROBOT:
        return pools.robot_train, pools.robot_val, None, pools.robot_split
    return pools.human_train, pools.human_val, pools.human_test, pools.human_split


def _log_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "val_accuracy"])
    for h in history:
        w.writerow([h["epoch"], "" if h["loss"] is None else repr(h["loss"]), repr(h["val_accuracy"])])
    return buf.getvalue()


# ---------------------------------------------------------------- commands


def cmd_generate(p: dict, out: Path) -> None:
    if p["dataset"] is not None:
        spec = DatasetSpec.from_dict(p["dataset"])
    else:
        spec = DatasetSpec.uniform(p["human_subjects"], p["human_runs_per_task"], p["robot_subjects"],
                                   p["robot_runs_per_task"], duration=float(p["duration"]), rate_hz=float(p["rate_hz"]))
    runs, manifest = generate_dataset(spec, p["seed"])
    path = write_dataset(runs, manifest, out)
    log.info("wrote %d runs and %s", len(runs), path)


def cmd_ingest(p: dict, out: Path) -> None:
    manifest = load_manifest(p["manifest"])
    runs = load_runs(manifest)
    table, reports = featurize_runs(runs, p["window_seconds"], p["overlap_fraction"], p["clean_k"])
    summary = {
        "runs": len(runs),
        "runs_by_source": {s.value: sum(r.source is s for r in runs) for s in Source},
        "subjects": manifest.subjects(),
        "duration_s": {
            "total": float(sum(r.duration for r in runs)),
            "min": float(min(r.duration for r in runs)),
            "max": float(max(r.duration for r in runs)),
        },
        "windows_kept": len(table),
        "cleaning": {s.value: r.to_dict() for s, r in sorted(reports.items(), key=lambda kv: kv[0].value)},
    }
    atomic_write_json(out / "ingest_summary.json", summary)


def cmd_featurize(p: dict, out: Path) -> None:
    runs = load_runs(load_manifest(p["manifest"]))
    table, reports = featurize_runs(runs, p["window_seconds"], p["overlap_fraction"], p["clean_k"])
    write_feature_csv(table, out / "features.csv")
    fit_pool_normalization(make_pools(table)).save(out / "normalization.json")
    atomic_write_json(out / "cleaning.json", {s.value: r.to_dict() for s, r in reports.items()})


def cmd_train(p: dict, out: Path) -> None:
    table, norm = _load_features(p)
    source = Source(p["source"])
    train_t, val_t, _, split = _source_pools(table, source)
    init = load_checkpoint(p["init"]).params if p["init"] else None
    cfg = _train_config(p)
    res = train(apply_normalization(train_t.x, norm), train_t.y, apply_normalization(val_t.x, norm), val_t.y, cfg, init=init)
    prov = {**res.provenance, "source": source.value, "best_val_accuracy": res.best_val_accuracy, "config": cfg.to_dict()}
    save_checkpoint(res.params, out / "checkpoint.ckpt", prov)
    atomic_write_text(out / "train_log.csv", _log_csv(res.log))
    atomic_write_json(out / "split.json", split.to_dict())


def cmd_finetune(p: dict, out: Path) -> None:
    table, norm = _load_features(p)
    train_t, val_t, test_t, split = _source_pools(table, Source.HUMAN)
    data = ExperimentData.from_tables(train_t, val_t, test_t, norm, split)
    (idx,) = stratified_nested_subsets(data.y_train, [float(p["fraction"])], p["seed"])
    cfg = _train_config(p)
    res = train(data.x_train[idx], data.y_train[idx], data.x_val, data.y_val, cfg, init=load_checkpoint(p["checkpoint"]).params)
    prov = {**res.provenance, "fraction": p["fraction"], "best_val_accuracy": res.best_val_accuracy, "config": cfg.to_dict()}
    save_checkpoint(res.params, out / "checkpoint.ckpt", prov)
    atomic_write_text(out / "train_log.csv", _log_csv(res.log))
    report = evaluate(res.params, data.x_test, data.y_test, "fine_tuned", float(p["fraction"]), split, p["seed"])
    atomic_write_json(out / "eval_report.json", report.to_dict())


def cmd_evaluate(p: dict, out: Path) -> None:
    table, norm = _load_features(p)
    params = load_checkpoint(p["checkpoint"]).params
    source = Source(p["source"])
    subset = table.where(lambda r: r.source is source)
    split = build_splits(subset.rows)
    parts = dict(zip(("train", "val", "test"), split_table(subset, split)))
    if p["split"] not in parts:
        raise ConfigError(f"split must be one of {sorted(parts)}, got {p['split']!r}")
    part = parts[p["split"]]
    report = evaluate(params, apply_normalization(part.x, norm), part.y, None, 1.0, split, p["seed"])
    atomic_write_json(out / "eval_report.json", report.to_dict())


def cmd_sweep(p: dict, out: Path) -> None:
    table, norm = _load_features(p)
    pools = make_pools(table)
    data = ExperimentData.from_tables(pools.human_train, pools.human_val, pools.human_test, norm, pools.human_split)
    rows, _ = fraction_sweep(data, load_checkpoint(p["checkpoint"]).params, [float(f) for f in p["fractions"]],
                             [int(s) for s in p["seeds"]], _train_config(p), jobs=int(p["jobs"]))
    atomic_write_text(out / "sweep.csv", format_sweep_csv(rows))
    atomic_write_text(out / "sweep.svg", sweep_svg(rows))
    means = [{"fraction": f, "regime": r.value, "mean_accuracy": a} for (f, r), a in sweep_means(rows).items()]
    atomic_write_json(out / "sweep_summary.json", means)


def cmd_subjects(p: dict, out: Path) -> None:
    table, norm = _load_features(p)
    human = table.where(lambda r: r.source is Source.HUMAN)
    rows = subject_protocol(human, load_checkpoint(p["checkpoint"]).params, norm, [int(s) for s in p["seeds"]],
                            _train_config(p), float(p["fraction"]))
    atomic_write_text(out / "subjects.csv", format_subjects_csv(rows))


def cmd_compare_dist(p: dict, out: Path) -> None:
    runs = load_runs(load_manifest(p["manifest"]))
    report = distribution_report(runs, p["window_seconds"], p["overlap_fraction"])
    atomic_write_text(out / "distribution.csv", format_distribution_csv(report))
    atomic_write_text(out / "boxplot.svg", boxplot_svg(report))


COMMANDS = {
    "generate": (cmd_generate, "synthesize a robot + human dataset (run CSVs and manifest)"),
    "ingest": (cmd_ingest, "validate a manifest's runs and report cleaning statistics"),
    "featurize": (cmd_featurize, "window, clean and featurize runs; fit normalization"),
    "train": (cmd_train, "train a classifier (robot pretraining by default)"),
    "finetune": (cmd_finetune, "fine-tune a checkpoint on a fraction of human training data"),
    "evaluate": (cmd_evaluate, "evaluate a checkpoint on one split"),
    "sweep": (cmd_sweep, "zero-shot vs. fine-tuned accuracy over training fractions"),
    "subjects": (cmd_subjects, "per-subject in- vs. out-of-distribution protocol"),
    "compare-dist": (cmd_compare_dist, "robot vs. human raw value distributions"),
}


# ---------------------------------------------------------------- entry point


def _float_list(s: str) -> list[float]:
    return [float(v) for v in s.split(",")]


def _int_list(s: str) -> list[int]:
    return [int(v) for v in s.split(",")]


def _add_flags(sub: argparse.ArgumentParser, command: str) -> None:
    sub.add_argument("--config", help="JSON parameter file (e.g. a previous config.echo.json)")
    sub.add_argument("--seed", type=int, help="global seed")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--jobs", type=int, help="worker processes (sweep only)")
    for key, default in DEFAULTS[command].items():
        flag = "--" + key.replace("_", "-")
        if key in PATH_KEYS or key in ("source", "split"):
            sub.add_argument(flag, dest=key)
        elif key == "fractions":
            sub.add_argument(flag, dest=key, type=_float_list, help="comma-separated, ascending")
        elif key == "seeds":
            sub.add_argument(flag, dest=key, type=_int_list, help="comma-separated")
        elif key in ("dataset", "dims"):
            continue
        elif isinstance(default, float):
            sub.add_argument(flag, dest=key, type=float)
        elif isinstance(default, int):
            sub.add_argument(flag, dest=key, type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toolsense", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        _add_flags(subs.add_parser(name, help=help_, description=help_), name)
    return parser


def _error_line(command: str | None, exc: BaseException) -> str:
    return json.dumps({"command": command, "error": type(exc).__name__, "message": str(exc)}, sort_keys=True)


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        params = resolve_config(args.command, args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](params, out)
        atomic_write_json(out / ECHO_NAME, {"command": args.command, **params})
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        log.debug("failure", exc_info=True)
        print(_error_line(args.command, exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
