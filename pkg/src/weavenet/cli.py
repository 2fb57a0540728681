"""Command line entry point: ``weavenet <command> ...``.

Commands
--------
featurize      initial atom/pair feature CSVs for every molecule in a file
dump-features  per-module atom/pair features of a trained model for one molecule
train          cross-validated training into a run directory
evaluate       test-fold metrics, report CSV and summary table for run directories
predict        per-task scores for new SMILES from a trained run
compare        graph model and the three fingerprint baselines on identical folds

Run directory layout::

    config.json               fully resolved configuration
    split_manifest.csv        fold and role of every molecule
    train_log.jsonl           one JSON record per log event
    round_<i>/round.json      tasks, target scaling and selected steps
    round_<i>/checkpoint_index.json
    round_<i>/checkpoints/step_<N>.ckpt

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys

import numpy as np

from .datasets import DataError, FoldSplit, compute_class_weights, load_csv, stratified_kfold
from .estimators import LogisticRegressionBaseline, MaxSimClassifier, PMTNNClassifier
from .featurizer import FeatureConfig, GraphBatch, encode_molecule, write_feature_dump
from .fingerprints import morgan_fingerprint
from .metrics import aggregate_report, format_summary, score_fold, write_report_csv, write_summary
from .model import ModelConfig, TaskSpec, WeaveModel
from .molgraph import SmilesError, from_smiles
from .train import (CheckpointIndex, TrainConfig, TrainingDiverged, predict_best_per_task,
                    select_best_per_task, train)
from .weave import WeaveConfig, write_feature_evolution

log = logging.getLogger("weavenet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {"path": None, "smiles_column": "smiles", "task_columns": None, "folds": 5, "rounds": None},
    "model": {
        "feature_mode": "full",
        "max_atoms": 60,
        "fc_layers": [2000, 100],
        "init": "he_uniform",
        "weave": {"num_modules": 1, "max_pair_distance": 2, "atom_atom_0": 50, "atom_pair_0": 50,
                  "pair_pair_0": 50, "pair_atom_0": 50, "atom_atom_1": 50, "pair_pair_1": 50,
                  "final_atom_depth": 128, "reduction": "gaussian_histogram", "skip_last_pair": True},
    },
    "train": {"batch_size": 96, "learning_rate": 0.003, "max_steps": 2000, "checkpoint_every": 1000,
              "log_every": 100},
    "eval": {"alpha": 20.0, "reference": "pmtnn"},
    "baselines": {
        "fingerprint": {"radius": 2, "n_bits": 2048},
        "pmtnn": {"hidden": [2000, 100], "dropout": 0.25, "optimizer": "adagrad", "learning_rate": 0.003,
                  "batch_size": 128, "max_steps": 2000, "checkpoint_every": 500},
        "lr": {"l2_grid": [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0], "max_iter": 10000},
    },
}


class ConfigError(ValueError):
    """Invalid configuration or command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise ConfigError("unknown config key %r" % key)
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _distance(text):
    if str(text).lower() in ("inf", "infinity", "none"):
        return "inf"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer or 'inf', got %r" % text) from None
    if value < 1:
        raise argparse.ArgumentTypeError("max pair distance must be >= 1")
    return value


def resolve_config(args):
    """Defaults, then the config file, then command-line flags."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as fh:
                cfg = _merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("cannot read config %s: %s" % (path, exc)) from None
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "mode", None):
        cfg["model"]["feature_mode"] = args.mode
    if getattr(args, "reduction", None):
        cfg["model"]["weave"]["reduction"] = args.reduction
    if getattr(args, "architecture", None):
        try:
            arch = WeaveConfig.from_notation(args.architecture)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cfg["model"]["weave"]["num_modules"] = arch.num_modules
        cfg["model"]["weave"]["max_pair_distance"] = arch.to_dict()["max_pair_distance"]
    if getattr(args, "weave_modules", None) is not None:
        cfg["model"]["weave"]["num_modules"] = args.weave_modules
    if getattr(args, "max_pair_distance", None) is not None:
        cfg["model"]["weave"]["max_pair_distance"] = args.max_pair_distance
    if getattr(args, "max_steps", None) is not None:
        cfg["train"]["max_steps"] = args.max_steps
        cfg["baselines"]["pmtnn"]["max_steps"] = args.max_steps
    if getattr(args, "data", None):
        cfg["data"]["path"] = args.data
    if getattr(args, "folds", None) is not None:
        cfg["data"]["folds"] = args.folds
    if getattr(args, "rounds", None) is not None:
        cfg["data"]["rounds"] = args.rounds
    if cfg["data"]["path"]:
        cfg["data"]["path"] = os.path.abspath(cfg["data"]["path"])
    try:
        model_config(cfg, [TaskSpec("check")])
        TrainConfig(seed=cfg["seed"], **cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def model_config(cfg, tasks):
    m = cfg["model"]
    return ModelConfig.from_dict({"weave": dict(m["weave"]), "fc_layers": m["fc_layers"], "tasks": tasks,
                                  "feature_mode": m["feature_mode"], "max_atoms": m["max_atoms"],
                                  "init": m["init"], "seed": cfg["seed"]})


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _logger(path):
    fh = open(path, "a")

    def emit(record):
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()
        if record.get("event") == "checkpoint":
            log.info("step %d validation %s", record["step"], record["metrics"])
    return emit, fh


def _load_dataset(cfg):
    d = cfg["data"]
    if not d["path"]:
        raise ConfigError("no dataset path (set data.path or pass --data)")
    ds = load_csv(d["path"], d["smiles_column"], d["task_columns"])
    if ds.n_failed:
        log.warning("%d molecule(s) failed to parse and were skipped", ds.n_failed)
    return ds


def _rounds(cfg, split):
    r = cfg["data"]["rounds"]
    return list(range(split.k)) if r is None else list(range(min(int(r), split.k)))


def _prepare_run(cfg, run_dir):
    os.makedirs(run_dir, exist_ok=True)
    _write_json(os.path.join(run_dir, "config.json"), cfg)
    ds = _load_dataset(cfg)
    split = stratified_kfold(ds, cfg["data"]["folds"], cfg["seed"])
    split.write_manifest(os.path.join(run_dir, "split_manifest.csv"), ds.smiles)
    return ds, split


def fit_round(cfg, ds, split, i, run_dir, emit):
    """Train one cross-validation round of the graph model into ``round_<i>``."""
    train_idx, valid_idx, _ = split.roles(i)
    rdir = os.path.join(run_dir, "round_%d" % i)
    os.makedirs(rdir, exist_ok=True)
    labels = ds.labels
    mean = np.zeros(len(ds.tasks))
    scale = np.ones(len(ds.tasks))
    for t, task in enumerate(ds.tasks):
        if not task.is_classification:
            col = labels[train_idx, t]
            mean[t] = np.nanmean(col)
            std = np.nanstd(col)
            scale[t] = std if std > 0 else 1.0
    targets = (labels - mean) / scale
    weights = compute_class_weights(labels[train_idx], ds.tasks)
    model = WeaveModel(model_config(cfg, ds.tasks))
    tcfg = TrainConfig(seed=cfg["seed"] + i, **cfg["train"])
    index = train(model, [ds.graphs[j] for j in train_idx], targets[train_idx], weights, tcfg,
                  [ds.graphs[j] for j in valid_idx], targets[valid_idx],
                  checkpoint_dir=os.path.join(rdir, "checkpoints"),
                  log=lambda rec: emit(dict(rec, round=i)))
    index.save(os.path.join(rdir, "checkpoint_index.json"))
    info = {"tasks": [{"name": t.name, "kind": t.kind} for t in ds.tasks],
            "target_mean": mean.tolist(), "target_scale": scale.tolist(),
            "best_steps": select_best_per_task(index)}
    _write_json(os.path.join(rdir, "round.json"), info)
    return info


def load_round(run_dir, i):
    rdir = os.path.join(run_dir, "round_%d" % i)
    index_path = os.path.join(rdir, "checkpoint_index.json")
    if not os.path.exists(index_path):
        raise DataError("missing checkpoints for round %d in %s" % (i, run_dir))
    index = CheckpointIndex.load(index_path)
    info = _read_json(os.path.join(rdir, "round.json"))
    model, _ = WeaveModel.load(index.entries[-1].path)
    return model, index, info


def predict_round(model, index, info, graphs):
    scores, _ = predict_best_per_task(model, index, graphs)
    return scores * np.asarray(info["target_scale"]) + np.asarray(info["target_mean"])


def _score_rows(name, ds, split, i, scores, alpha):
    _, _, test_idx = split.roles(i)
    rows = []
    for t, task in enumerate(ds.tasks):
        rows.append(score_fold(name, task.name, i, scores[:, t], ds.labels[test_idx, t], alpha, task.kind))
    return rows


def cmd_train(args):
    cfg = resolve_config(args)
    ds, split = _prepare_run(cfg, args.run_dir)
    emit, fh = _logger(os.path.join(args.run_dir, "train_log.jsonl"))
    try:
        for i in _rounds(cfg, split):
            log.info("round %d of %d", i + 1, split.k)
            fit_round(cfg, ds, split, i, args.run_dir, emit)
    finally:
        fh.close()
    return EXIT_OK


def _load_run_dataset(run_dir):
    cfg = _read_json(os.path.join(run_dir, "config.json"))
    ds = _load_dataset(cfg)
    split = FoldSplit.read_manifest(os.path.join(run_dir, "split_manifest.csv"))
    if len(split.folds) != len(ds):
        raise DataError("split manifest of %s does not match its dataset" % run_dir)
    return cfg, ds, split


def cmd_evaluate(args):
    rows = []
    names = []
    for run_dir in args.run_dir:
        cfg, ds, split = _load_run_dataset(run_dir)
        name = os.path.basename(os.path.normpath(run_dir))
        names.append(name)
        for i in range(split.k):
            if not os.path.exists(os.path.join(run_dir, "round_%d" % i, "checkpoint_index.json")):
                continue
            model, index, info = load_round(run_dir, i)
            _, _, test_idx = split.roles(i)
            scores = predict_round(model, index, info, [ds.graphs[j] for j in test_idx])
            rows += _score_rows(name, ds, split, i, scores, cfg["eval"]["alpha"])
    if not rows:
        raise DataError("no trained rounds found")
    reference = args.reference if args.reference else (names[0] if len(names) > 1 else None)
    report = aggregate_report(rows, reference)
    out = args.out or args.run_dir[0]
    os.makedirs(out, exist_ok=True)
    write_report_csv(report, os.path.join(out, "report.csv"))
    write_summary(report, os.path.join(out, "summary.txt"))
    sys.stdout.write(format_summary(report))
    return EXIT_OK


def _read_smiles(path, smiles_column="smiles"):
    """SMILES from a CSV with a header column, or one per line."""
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        raise DataError("%s contains no molecules" % path)
    header = next(csv.reader([lines[0]]))
    if smiles_column in header:
        col = header.index(smiles_column)
        return [row[col] if len(row) > col else "" for row in csv.reader(lines[1:]) if row]
    return [line.split()[0] if line.split() else "" for line in lines if line.strip()]


def cmd_predict(args):
    model, index, info = load_round(args.run_dir, args.round)
    smiles = list(args.smiles or [])
    if args.input:
        smiles += _read_smiles(args.input)
    if not smiles:
        raise ConfigError("give SMILES with --input or --smiles")
    graphs, ok, errors = [], [], {}
    for k, s in enumerate(smiles):
        try:
            graphs.append(from_smiles(s))
            ok.append(k)
        except (SmilesError, ValueError) as exc:
            errors[k] = str(exc)
    scores = predict_round(model, index, info, graphs) if graphs else np.zeros((0, len(info["tasks"])))
    by_row = dict(zip(ok, scores))
    names = [t["name"] for t in info["tasks"]]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["smiles"] + names + ["error"])
        for k, s in enumerate(smiles):
            if k in by_row:
                w.writerow([s] + ["%.6f" % v for v in by_row[k]] + [""])
            else:
                w.writerow([s] + [""] * len(names) + [errors[k]])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_featurize(args):
    cfg = FeatureConfig(args.mode or "full", args.max_atoms, args.max_pair_distance or 2)
    smiles = _read_smiles(args.input, args.smiles_column)
    os.makedirs(args.out_dir, exist_ok=True)
    failures = []
    for k, s in enumerate(smiles):
        try:
            g = from_smiles(s)
        except (SmilesError, ValueError) as exc:
            failures.append((k, s, str(exc)))
            continue
        write_feature_dump(g, cfg, os.path.join(args.out_dir, "mol_%d_atoms.csv" % k),
                           os.path.join(args.out_dir, "mol_%d_pairs.csv" % k))
    with open(os.path.join(args.out_dir, "failures.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "smiles", "error"])
        w.writerows(failures)
    log.info("featurized %d molecule(s), %d failure(s)", len(smiles) - len(failures), len(failures))
    return EXIT_OK


def cmd_dump_features(args):
    if args.step is not None:
        model, _ = WeaveModel.load(os.path.join(args.run_dir, "round_%d" % args.round, "checkpoints",
                                                "step_%d.ckpt" % args.step))
    else:
        model, _, _ = load_round(args.run_dir, args.round)
    g = from_smiles(args.smiles)
    batch = GraphBatch.from_encoded([encode_molecule(g, model.cfg.feature_config)])
    trace = []
    model.molecule_features(batch, training=False, trace=trace)
    for path in write_feature_evolution(trace, batch, args.out_dir):
        log.info("wrote %s", path)
    return EXIT_OK


def _fingerprints(graphs, fp_cfg):
    return np.stack([morgan_fingerprint(g, fp_cfg["radius"], fp_cfg["n_bits"]) for g in graphs])


def cmd_compare(args):
    cfg = resolve_config(args)
    ds, split = _prepare_run(cfg, args.run_dir)
    if not all(t.is_classification for t in ds.tasks):
        raise ConfigError("compare needs classification tasks")
    emit, fh = _logger(os.path.join(args.run_dir, "train_log.jsonl"))
    alpha = cfg["eval"]["alpha"]
    bcfg = cfg["baselines"]
    X = _fingerprints(ds.graphs, bcfg["fingerprint"])
    rows = []
    try:
        for i in _rounds(cfg, split):
            tr, va, te = split.roles(i)
            log.info("round %d: graph convolution", i)
            fit_round(cfg, ds, split, i, args.run_dir, emit)
            model, index, info = load_round(args.run_dir, i)
            rows += _score_rows("graphconv", ds, split, i,
                                predict_round(model, index, info, [ds.graphs[j] for j in te]), alpha)
            y = ds.labels
            names = ds.task_names
            log.info("round %d: fingerprint baselines", i)
            pm = PMTNNClassifier(random_state=cfg["seed"] + i, task_names=names, **bcfg["pmtnn"])
            pm.fit(X[tr], y[tr], eval_set=(X[va], y[va]))
            rows += _score_rows("pmtnn", ds, split, i, pm.predict_scores(X[te]), alpha)
            lr = LogisticRegressionBaseline(l2_grid=tuple(bcfg["lr"]["l2_grid"]), max_iter=bcfg["lr"]["max_iter"],
                                            random_state=cfg["seed"])
            lr.fit(X[tr], y[tr], eval_set=(X[va], y[va]))
            rows += _score_rows("logreg", ds, split, i, lr.predict_scores(X[te]), alpha)
            ms = MaxSimClassifier().fit(X[tr], y[tr])
            rows += _score_rows("maxsim", ds, split, i, ms.predict_scores(X[te]), alpha)
    finally:
        fh.close()
    reference = cfg["eval"]["reference"]
    report = aggregate_report(rows, reference)
    write_report_csv(report, os.path.join(args.run_dir, "report.csv"))
    write_summary(report, os.path.join(args.run_dir, "summary.txt"))
    sys.stdout.write(format_summary(report))
    return EXIT_OK


def _add_model_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--data", help="dataset CSV (overrides data.path)")
    p.add_argument("--mode", choices=("full", "simple"))
    p.add_argument("--reduction", choices=("sum", "rms", "histogram", "gaussian_histogram"))
    p.add_argument("--architecture", help="weave modules and pair cutoff as W<x>N<y>, e.g. W2N2")
    p.add_argument("--weave-modules", type=int)
    p.add_argument("--max-pair-distance", type=_distance)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--rounds", type=int, help="train only the first N cross-validation rounds")


def build_parser():
    parser = _Parser(prog="weavenet", description="Graph convolution models for molecules.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("featurize", help="write initial atom and pair feature CSVs")
    p.add_argument("input")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=("full", "simple"))
    p.add_argument("--max-atoms", type=int, default=60)
    p.add_argument("--max-pair-distance", type=_distance)
    p.add_argument("--smiles-column", default="smiles")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="cross-validated training")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score test folds of one or more runs")
    p.add_argument("--run-dir", nargs="+", required=True)
    p.add_argument("--reference", help="run name used for delta AUC and sign tests")
    p.add_argument("--out", help="output directory (default: first run directory)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="score new molecules")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--round", type=int, default=0)
    p.add_argument("--input", help="file of SMILES (CSV with a smiles column or one per line)")
    p.add_argument("--smiles", nargs="*")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="graph model against fingerprint baselines")
    _add_model_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("dump-features", help="per-module features of a trained model")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--round", type=int, default=0)
    p.add_argument("--step", type=int)
    p.add_argument("--smiles", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_dump_features)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DataError, SmilesError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
