import csv
import json

import numpy as np
import pytest

from nigptree.cli import main
from nigptree.data import FeatureDataset, load_features, save_features, split_sequential, synth_blobs
from nigptree.model_io import load_model


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = synth_blobs(3, 40, 4, 6.0, 0.2, seed=1, seq_len=20)
    train, test = split_sequential(ds, 10)
    save_features(train, root / "train.csv")
    save_features(test, root / "test.bin", "packed")
    config = {"task": "blobs", "train_data": "train.csv", "model": "model.json",
              "epochs": 8, "n_inducing": 2, "kernel": "rbf", "denoiser": "smooth:3"}
    (root / "run.json").write_text(json.dumps(config))
    assert main(["train", "--config", str(root / "run.json")]) == 0
    return root


def test_train_outputs(workspace):
    model = load_model(workspace / "model.json")
    assert model.n_classes == 3 and model.input_dim == 4
    report = json.loads((workspace / "model.json.report.json").read_text())
    elbo = report["elbo_history"]
    assert len(elbo) == 8
    assert np.all(np.diff(elbo) >= -1e-8)
    assert report["train_seconds"] > 0
    assert report["config"]["epochs"] == 8
    assert 0 <= report["train_metrics"]["accuracy"] <= 1


def test_model_file_header(workspace):
    state = json.loads((workspace / "model.json").read_text())
    assert state["format"] == "nigptree-model"
    assert state["schema_version"] == 1
    assert state["tree"]["n_classes"] == 3


def test_effective_config_reruns_to_identical_model(workspace, tmp_path):
    report = json.loads((workspace / "model.json.report.json").read_text())
    cfg = dict(report["config"], model=str(tmp_path / "again.json"),
               report=str(tmp_path / "again.report.json"))
    (tmp_path / "again.cfg").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "again.cfg")]) == 0
    assert (tmp_path / "again.json").read_bytes() == (workspace / "model.json").read_bytes()


def test_eval_prints_metrics(workspace, capsys):
    assert main(["eval", "--model", str(workspace / "model.json"),
                 "--data", str(workspace / "test.bin"),
                 "--report", str(workspace / "eval.json")]) == 0
    out = capsys.readouterr().out
    for key in ("accuracy", "macro precision", "macro recall", "macro F1", "confusion",
                "test time"):
        assert key in out
    metrics = json.loads((workspace / "eval.json").read_text())
    assert np.trace(metrics["confusion"]) / np.sum(metrics["confusion"]) == metrics["accuracy"]


def test_eval_on_training_data_of_separated_blobs(tmp_path, capsys):
    ds = synth_blobs(3, 20, 4, 8.0, 0.0, seed=0)
    save_features(ds, tmp_path / "d.csv")
    (tmp_path / "c.json").write_text(json.dumps(
        {"train_data": "d.csv", "model": "m.json", "epochs": 5, "denoiser": "none"}))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == 0
    assert main(["eval", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "d.csv"),
                 "--report", str(tmp_path / "e.json")]) == 0
    assert json.loads((tmp_path / "e.json").read_text())["accuracy"] == 1.0


def test_eval_permuted_rows_identical(workspace, tmp_path):
    ds = load_features(workspace / "test.bin")
    perm = np.random.default_rng(0).permutation(ds.n)
    save_features(ds.subset(perm), tmp_path / "perm.bin", "packed")
    out = []
    for data in (workspace / "test.bin", tmp_path / "perm.bin"):
        rep = tmp_path / "r.json"
        assert main(["eval", "--model", str(workspace / "model.json"), "--data", str(data),
                     "--report", str(rep)]) == 0
        m = json.loads(rep.read_text())
        m.pop("test_seconds")
        out.append(m)
    assert out[0] == out[1]


def test_eval_single_class_warns(workspace, tmp_path):
    ds = load_features(workspace / "train.csv")
    one = ds.subset(np.flatnonzero(ds.labels == 1))
    save_features(one, tmp_path / "one.csv")
    with pytest.warns(UserWarning, match="undefined"):
        assert main(["eval", "--model", str(workspace / "model.json"),
                     "--data", str(tmp_path / "one.csv")]) == 0


def test_predict_csv(workspace):
    out = workspace / "pred.csv"
    assert main(["predict", "--model", str(workspace / "model.json"),
                 "--data", str(workspace / "train.csv"), "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "label" and len(rows[0]) == 4
    body = np.array(rows[1:], dtype=float)
    np.testing.assert_allclose(body[:, 1:].sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(body[:, 0], np.argmax(body[:, 1:], axis=1))
    labels = load_features(workspace / "train.csv").labels
    report = json.loads((workspace / "model.json.report.json").read_text())
    # training metrics are computed on the denoised inputs, so compare with a fresh eval
    assert main(["eval", "--model", str(workspace / "model.json"),
                 "--data", str(workspace / "train.csv"),
                 "--report", str(workspace / "tr.json")]) == 0
    acc = json.loads((workspace / "tr.json").read_text())["accuracy"]
    assert np.mean(body[:, 0] == labels) == acc
    assert report["train_metrics"]["accuracy"] >= 0.9


def test_dimension_mismatch_names_both(workspace, tmp_path, capsys):
    save_features(synth_blobs(3, 4, 5, 6.0), tmp_path / "d5.csv")
    assert main(["eval", "--model", str(workspace / "model.json"),
                 "--data", str(tmp_path / "d5.csv")]) != 0
    err = capsys.readouterr().err
    assert "d=5" in err and "d=4" in err


def test_class_mismatch_names_both(workspace, tmp_path, capsys):
    ds = FeatureDataset(np.zeros((4, 4)), np.array([0, 1, 2, 3]))
    save_features(ds, tmp_path / "c4.bin", "packed")
    assert main(["predict", "--model", str(workspace / "model.json"),
                 "--data", str(tmp_path / "c4.bin"), "--out", str(tmp_path / "p.csv")]) != 0
    err = capsys.readouterr().err
    assert "C=4" in err and "C=3" in err
    assert not (tmp_path / "p.csv").exists()


@pytest.mark.parametrize("patch,match", [
    ({"epochs": 0}, "epochs"),
    ({"learning_rate": -1}, "learning_rate"),
    ({"kernel": "poly"}, "kernel"),
    ({"train_data": "missing.csv"}, "not found"),
    ({"colour": "red"}, "unknown config keys"),
])
def test_train_config_errors(workspace, tmp_path, capsys, patch, match):
    cfg = {"train_data": str(workspace / "train.csv"), "model": str(tmp_path / "m.json")}
    cfg.update(patch)
    (tmp_path / "bad.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "bad.json")]) != 0
    assert match in capsys.readouterr().err
    assert not (tmp_path / "m.json").exists()


def test_train_invalid_json(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{epochs: 3")
    assert main(["train", "--config", str(tmp_path / "bad.json")]) != 0
    assert "invalid JSON" in capsys.readouterr().err


def test_eval_rejects_non_model(tmp_path, capsys):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    save_features(synth_blobs(2, 3, 2, 6.0), tmp_path / "d.csv")
    assert main(["eval", "--model", str(tmp_path / "x.json"), "--data",
                 str(tmp_path / "d.csv")]) != 0
    assert "not a nigptree-model" in capsys.readouterr().err


def test_synth_formats_and_split(tmp_path):
    assert main(["synth", "--classes", "4", "--per-class", "10", "--dim", "3",
                 "--out", str(tmp_path / "a.bin"), "--format", "packed"]) == 0
    ds = load_features(tmp_path / "a.bin")
    assert (ds.n, ds.d, ds.C) == (40, 3, 4)
    assert main(["synth", "--per-class", "40", "--seq-len", "20", "--train-frames", "10",
                 "--out", str(tmp_path / "tr.csv"), "--test-out", str(tmp_path / "te.csv")]) == 0
    tr = load_features(tmp_path / "tr.csv")
    assert tr.n == 60 and tr.groups is not None
    assert main(["synth", "--out", str(tmp_path / "s.csv"), "--test-out",
                 str(tmp_path / "t.csv"), "--test-fraction", "0.25"]) == 0
    assert load_features(tmp_path / "t.csv").n == 45


def test_synth_rejects_bad_geometry(tmp_path, capsys):
    assert main(["synth", "--separation", "0", "--out", str(tmp_path / "x.csv")]) != 0
    assert "infeasible" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "nigptree", "synth", "--per-class", "4",
                           "--out", str(tmp_path / "x.csv")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "x.csv").exists()
