import csv
import json

import numpy as np
import pytest

from conftest import blobs
from ndcal.cli import main
from ndcal.data import to_libsvm
from ndcal.experiment import (ExperimentConfig, ExperimentError, fold_plan, parse_cv,
                              run_experiment, run_grid)
from ndcal.learners import LearnerConfig
from ndcal.metrics import ReliabilityBin, ece


def write_csv(path, d):
    with open(path, "w") as fh:
        fh.write(",".join(f"f{j}" for j in range(d.num_features)) + ",label\n")
        for x, c in zip(d.X, d.y):
            fh.write(",".join(repr(float(v)) for v in x) + f",c{c}\n")
    return str(path)


def test_parse_cv():
    assert parse_cv("10x10") == (10, 10)
    assert parse_cv("3x2") == (3, 2)
    assert parse_cv("none") == (1, 1)
    with pytest.raises(ExperimentError):
        parse_cv("ten")


def test_config_validation():
    with pytest.raises(ExperimentError):
        ExperimentConfig(external_cal="vector", holdout=0.7)
    with pytest.raises(ExperimentError):
        ExperimentConfig(internal_cal="beta")


def test_cv_3x2_aggregation_and_determinism():
    d = blobs(20, 3, seed=1)
    cfg = ExperimentConfig(runs=3, folds=2, seed=4, bins=5)
    a = run_experiment(cfg, d)
    assert len(a.reports) == 6
    v = a.values("nll")
    assert a.mean("nll") == pytest.approx(v.sum() / 6, abs=1e-12)
    mu = sum(v) / len(v)
    two_pass = (sum((x - mu) ** 2 for x in v) / (len(v) - 1)) ** 0.5
    assert a.std("nll") == pytest.approx(two_pass, abs=1e-10)
    b = run_experiment(cfg, d)
    for (r1, f1, x), (r2, f2, y) in zip(a.reports, b.reports):
        assert (r1, f1, x.nll, x.accuracy, x.ece) == (r2, f2, y.nll, y.accuracy, y.ece)


def test_folds_cover_data_each_run():
    d = blobs(10, 3)
    cfg = ExperimentConfig(runs=2, folds=5)
    plan = fold_plan(d, cfg)
    for r in range(2):
        ev = np.concatenate([e for rr, _, _, e in plan if rr == r])
        np.testing.assert_array_equal(np.sort(ev), np.arange(d.n))


def test_external_scheme_runs_and_grid():
    d = blobs(30, 3, seed=2)
    cfg = ExperimentConfig(runs=1, folds=3, seed=0, learner=LearnerConfig("gnb"))
    tables = run_grid(cfg, ["baseline", "both-ir"], d)
    assert set(tables) == {"baseline", "both-ir"}
    assert tables["both-ir"].config["external_cal"] == "vector"


def test_single_fold_needs_test_set():
    d = blobs(10, 2)
    with pytest.raises(ExperimentError, match="test set"):
        run_experiment(ExperimentConfig(runs=1, folds=1), d)
    table = run_experiment(ExperimentConfig(runs=2, folds=1), d, blobs(5, 2, seed=9))
    assert len(table.reports) == 2


def test_infeasible_stratification_names_class():
    from ndcal.data import Dataset, DatasetError
    X = np.arange(12, dtype=float)[:, None]
    y = np.array([0] * 6 + [1] * 5 + [2])
    d = Dataset(X, y, 3, ("a", "b", "lonely"))
    with pytest.raises(DatasetError, match="lonely"):
        run_experiment(ExperimentConfig(runs=1, folds=1, external_cal="vector"), d, d)


# -- command line ---------------------------------------------------------------

@pytest.fixture
def toy(tmp_path):
    return write_csv(tmp_path / "toy.csv", blobs(25, 3, seed=3))


def test_train_evaluate_round_trip(tmp_path, toy, capsys):
    model = str(tmp_path / "m.json")
    assert main(["train", "--data", toy, "--out", model, "--seed", "1"]) == 0
    out = tmp_path / "rep"
    assert main(["evaluate", "--model", model, "--data", toy, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["accuracy"] >= 1 / 3       # at least the majority rate
    rows = list(csv.DictReader(open(out / "bins.csv")))
    assert len(rows) == 20


def test_train_two_class_toy(tmp_path):
    data = tmp_path / "two.csv"
    data.write_text("x,y\n0.1,a\n0.2,a\n0.9,b\n1.1,b\n")
    model = tmp_path / "m.json"
    assert main(["train", "--data", str(data), "--out", str(model)]) == 0
    from ndcal.dichotomy import NestedDichotomy
    nd = NestedDichotomy.load(model)
    assert nd.label_names == ("a", "b")
    assert list(nd.predict(np.array([[0.0], [1.2]]))) == [0, 1]


def test_missing_data_is_usage_error(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "m.json")]) == 2
    assert "--data is required" in capsys.readouterr().err


def test_corrupt_model_exit_one(tmp_path, toy, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format_version": 1, "nodes": [')
    assert main(["evaluate", "--model", str(bad), "--data", toy]) == 1
    assert "format_version" in capsys.readouterr().err


def test_internal_isotonic_serialised(tmp_path, toy):
    model = tmp_path / "m.json"
    assert main(["train", "--data", toy, "--out", str(model), "--internal-cal", "isotonic"]) == 0
    doc = json.loads(model.read_text())
    kinds = {n["calibrator"]["kind"] for n in doc["nodes"] if n["left"] >= 0}
    assert kinds <= {"isotonic", "identity"} and "isotonic" in kinds


def test_evaluate_single_bin(tmp_path, toy):
    model = str(tmp_path / "m.json")
    main(["train", "--data", toy, "--out", model])
    out = tmp_path / "r"
    assert main(["evaluate", "--model", model, "--data", toy, "--bins", "1", "--out",
                 str(out)]) == 0
    assert len(list(csv.DictReader(open(out / "bins.csv")))) == 1


def test_reliability_csv_recomputable(tmp_path, toy):
    model = str(tmp_path / "m.json")
    main(["train", "--data", toy, "--out", model, "--external-cal", "vector"])
    path = tmp_path / "depth.csv"
    assert main(["reliability", "--model", model, "--data", toy, "--bins", "10",
                 "--out", str(path)]) == 0
    rows = list(csv.DictReader(open(path)))
    from ndcal.dichotomy import NestedDichotomy
    depth = NestedDichotomy.load(model).structure.depth
    assert sorted({int(r["depth"]) for r in rows}) == list(range(1, depth + 1))
    for d in range(1, depth + 1):
        sub = [r for r in rows if int(r["depth"]) == d]
        bins = [ReliabilityBin(0, 0, int(r["bin_count"]), float(r["bin_conf"]),
                               float(r["bin_acc"])) for r in sub]
        assert ece(bins) == pytest.approx(float(sub[0]["ece"]), abs=1e-12)


def test_reliability_two_class_one_depth(tmp_path):
    data = tmp_path / "two.csv"
    data.write_text("0.1,a\n0.2,a\n0.3,a\n0.9,b\n1.1,b\n1.3,b\n")
    model = str(tmp_path / "m.json")
    main(["train", "--data", str(data), "--out", model])
    path = tmp_path / "d.csv"
    main(["reliability", "--model", model, "--data", str(data), "--out", str(path)])
    assert {r["depth"] for r in csv.DictReader(open(path))} == {"1"}


def test_toml_config_and_flag_override(tmp_path, toy):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'data = "{toy}"\nlearner = "gnb"\nseed = 5\n')
    model = tmp_path / "m.json"
    assert main(["train", "--config", str(cfg), "--out", str(model), "--seed", "7"]) == 0
    doc = json.loads(model.read_text())
    assert doc["learner"]["kind"] == "gnb"
    assert doc["seed"] == 7


def test_libsvm_data_and_experiment_outputs(tmp_path):
    d = blobs(15, 3, seed=5)
    shifted = type(d)(d.X - d.X.min() + 0.5, d.y, d.num_classes)
    svm = tmp_path / "toy.svm"
    svm.write_text(to_libsvm(shifted))
    out = tmp_path / "exp"
    assert main(["experiment", "--data", str(svm), "--cv", "2x3", "--learner", "mnb",
                 "--schemes", "baseline,internal-ps", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "folds.csv")))
    assert len(rows) == 12
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"baseline", "internal-ps"}
    assert main(["experiment", "--data", str(svm), "--schemes", "nope"]) == 2
