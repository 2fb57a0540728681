import csv
import json

import numpy as np
import pytest

from weavenet.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from weavenet.molgraph import from_smiles, random_smiles
from weavenet.synthetic import generate_acid_dataset, write_dataset_csv

TINY = {
    "model": {"fc_layers": [16],
              "weave": {"atom_atom_0": 6, "atom_pair_0": 4, "pair_pair_0": 4, "pair_atom_0": 6, "atom_atom_1": 6,
                        "pair_pair_1": 4, "final_atom_depth": 8, "reduction": "sum"}},
    "train": {"batch_size": 16, "learning_rate": 0.01, "max_steps": 20, "checkpoint_every": 10},
    "baselines": {"pmtnn": {"hidden": [32, 8], "max_steps": 20, "checkpoint_every": 10},
                  "lr": {"l2_grid": [0.1, 1.0]}},
}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    smiles, labels = generate_acid_dataset(60, seed=4)
    write_dataset_csv(root / "acids.csv", smiles, labels)
    (root / "tiny.json").write_text(json.dumps(TINY))
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    run = workspace / "run_a"
    code = main(["train", "--config", str(workspace / "tiny.json"), "--data", str(workspace / "acids.csv"),
                 "--run-dir", str(run), "--rounds", "2", "--seed", "3"])
    assert code == EXIT_OK
    return run


def test_featurize_writes_dumps(tmp_path, capsys):
    src = tmp_path / "in.csv"
    src.write_text("smiles\nCC(C)Cc1ccc(cc1)C(C)C(=O)O\nC1CC\n")
    assert main(["featurize", str(src), "--out-dir", str(tmp_path / "full")]) == EXIT_OK
    atoms = read_csv(tmp_path / "full" / "mol_0_atoms.csv")
    # atom index and element columns precede the features
    assert len(atoms) == 1 + 15 and len(atoms[0]) == 2 + 27
    failures = read_csv(tmp_path / "full" / "failures.csv")
    assert failures[1][:2] == ["1", "C1CC"]
    assert main(["featurize", str(src), "--out-dir", str(tmp_path / "simple"), "--mode", "simple"]) == EXIT_OK
    assert len(read_csv(tmp_path / "simple" / "mol_0_atoms.csv")[0]) == 2 + 11


def test_featurize_empty_file_is_data_error(tmp_path):
    (tmp_path / "empty.csv").write_text("")
    assert main(["featurize", str(tmp_path / "empty.csv"), "--out-dir", str(tmp_path / "o")]) == EXIT_DATA


def test_train_writes_self_describing_run(trained):
    cfg = json.loads((trained / "config.json").read_text())
    assert cfg["seed"] == 3 and cfg["data"]["folds"] == 5
    manifest = read_csv(trained / "split_manifest.csv")
    assert len(manifest) == 61
    for i in (0, 1):
        info = json.loads((trained / ("round_%d" % i) / "round.json").read_text())
        assert set(info["best_steps"]) == {"acid"}
        assert (trained / ("round_%d" % i) / "checkpoints" / "step_20.ckpt").exists()
    assert not (trained / "round_2").exists()
    records = [json.loads(line) for line in (trained / "train_log.jsonl").read_text().splitlines()]
    assert {r["event"] for r in records} == {"checkpoint"}


def test_train_is_reproducible(workspace, trained):
    again = workspace / "run_again"
    assert main(["train", "--config", str(workspace / "tiny.json"), "--data", str(workspace / "acids.csv"),
                 "--run-dir", str(again), "--rounds", "2", "--seed", "3"]) == EXIT_OK
    for rel in ("split_manifest.csv", "round_0/checkpoints/step_20.ckpt", "round_1/checkpoint_index.json",
                "round_1/round.json"):
        assert (trained / rel).read_bytes() == (again / rel).read_bytes(), rel


def test_evaluate_single_and_self_reference(trained, tmp_path, capsys):
    assert main(["evaluate", "--run-dir", str(trained), "--out", str(tmp_path / "one")]) == EXIT_OK
    rows = read_csv(tmp_path / "one" / "report.csv")
    assert rows[0][:3] == ["model", "task", "fold"] and len(rows) == 3
    capsys.readouterr()
    assert main(["evaluate", "--run-dir", str(trained), str(trained), "--reference", "run_a",
                 "--out", str(tmp_path / "two")]) == EXIT_OK
    summary = capsys.readouterr().out
    assert "Median dAUC" in summary and "0.000" in summary and "n=0" in summary


def test_evaluate_missing_checkpoints(trained, tmp_path):
    run = tmp_path / "untrained"
    run.mkdir()
    for name in ("config.json", "split_manifest.csv"):
        (run / name).write_bytes((trained / name).read_bytes())
    assert main(["evaluate", "--run-dir", str(run)]) == EXIT_DATA


def test_predict_scores_and_errors(trained, tmp_path):
    smiles = "CC(=O)Oc1ccccc1C(=O)O"
    rerendered = random_smiles(from_smiles(smiles), 5)
    out = tmp_path / "pred.csv"
    assert main(["predict", "--run-dir", str(trained), "--smiles", smiles, smiles, rerendered, "C1CC",
                 "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert rows[0] == ["smiles", "acid", "error"]
    assert rows[1][1] == rows[2][1]
    assert abs(float(rows[1][1]) - float(rows[3][1])) < 1e-6
    assert rows[4][1] == "" and rows[4][2]


def test_predict_needs_input(trained):
    assert main(["predict", "--run-dir", str(trained)]) == EXIT_USAGE


def test_dump_features(trained, tmp_path):
    assert main(["dump-features", "--run-dir", str(trained), "--smiles", "CCO", "--out-dir",
                 str(tmp_path / "d")]) == EXIT_OK
    assert any(p.suffix == ".csv" for p in (tmp_path / "d").iterdir())


def test_compare_runs_all_models(workspace, tmp_path, capsys):
    run = tmp_path / "cmp"
    assert main(["compare", "--config", str(workspace / "tiny.json"), "--data", str(workspace / "acids.csv"),
                 "--run-dir", str(run), "--rounds", "1"]) == EXIT_OK
    summary = capsys.readouterr().out
    for name in ("graphconv", "pmtnn", "logreg", "maxsim"):
        assert name in summary
    assert "Median dAUC" in summary
    models = {row[0] for row in read_csv(run / "report.csv")[1:]}
    assert models == {"graphconv", "pmtnn", "logreg", "maxsim"}


@pytest.mark.parametrize("argv", [
    ["train", "--run-dir", "x", "--architecture", "Q2"],
    ["train", "--run-dir", "x", "--max-pair-distance", "0"],
    ["train", "--run-dir", "x"],
    ["nonsense"],
])
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    try:
        code = main(argv)
    except SystemExit as exc:   # argparse rejects before dispatch
        code = exc.code
    assert code == EXIT_USAGE


def test_architecture_flag_resolves(workspace, tmp_path):
    run = tmp_path / "arch"
    assert main(["train", "--config", str(workspace / "tiny.json"), "--data", str(workspace / "acids.csv"),
                 "--run-dir", str(run), "--rounds", "1", "--architecture", "W2Ninf", "--max-steps", "2"]) == EXIT_OK
    weave = json.loads((run / "config.json").read_text())["model"]["weave"]
    assert weave["num_modules"] == 2 and weave["max_pair_distance"] == "inf"


def test_unknown_config_key_and_missing_data(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"modle": {}}))
    assert main(["train", "--config", str(tmp_path / "bad.json"), "--run-dir", str(tmp_path / "r")]) == EXIT_USAGE
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--run-dir", str(tmp_path / "r")]) == EXIT_DATA


def test_numeric_failure_exit_code(workspace, tmp_path):
    cfg = json.loads(json.dumps(TINY))
    cfg["train"]["learning_rate"] = 1e300
    (tmp_path / "hot.json").write_text(json.dumps(cfg))
    with np.errstate(all="ignore"):
        code = main(["train", "--config", str(tmp_path / "hot.json"), "--data", str(workspace / "acids.csv"),
                     "--run-dir", str(tmp_path / "r"), "--rounds", "1"])
    assert code == EXIT_NUMERIC
