import json

import numpy as np
import pytest

from hoigcn.cli import main, write_report
from hoigcn.graph import GraphSample, write_dataset_jsonl
from hoigcn.scene_mining import build_heatmap
from hoigcn.training import ConfusionMatrix, EvalResult

SMALL = ["--channels", "4,8,8", "--gru-hidden", "4", "--dtype", "float64"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--samples-per-class", "10", "--seed", "7", "--num-scenes", "2"]) == 0
    return out


@pytest.fixture(scope="module")
def dataset_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("built")
    assert main(["build", "--poses", str(synth_dir / "poses.jsonl"), "--labels", str(synth_dir / "labels.csv"),
                 "--areas", str(synth_dir / "areas.json"), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def model_dir(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    code = main(["train", "--dataset", str(dataset_dir / "dataset.jsonl"), "--arch", "gcn-gru", "--loss", "multi",
                 "--with-objects", "true", "--epochs", "2", "--seed", "1", "--out", str(out)] + SMALL)
    assert code == 0
    return out


def test_synth_outputs(synth_dir):
    names = {p.name for p in synth_dir.iterdir()}
    assert {"poses.jsonl", "labels.csv", "areas.json", "manifest.json"} <= names
    manifest = json.loads((synth_dir / "manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 7 and manifest["samples_per_class"] == 10
    assert "version" in manifest and "started" in manifest and "finished" in manifest


def test_mine_areas(synth_dir, tmp_path):
    assert main(["mine-areas", "--poses", str(synth_dir / "poses.jsonl"), "--out", str(tmp_path)]) == 0
    areas = json.loads((tmp_path / "areas.json").read_text())
    assert set(areas) == {"scene00", "scene01"}
    assert (tmp_path / "heatmap.csv").exists() and (tmp_path / "heatmaps" / "scene00.csv").exists()


def test_build_dataset(dataset_dir):
    lines = (dataset_dir / "dataset.jsonl").read_text().splitlines()
    assert len(lines) == 40
    rec = json.loads(lines[0])
    assert np.asarray(rec["nodes"]).shape == (20, 22, 2)


def test_train_outputs(model_dir):
    assert {"model.json", "losscurve.csv", "manifest.json"} <= {p.name for p in model_dir.iterdir()}
    assert (model_dir / "losscurve.csv").read_text().splitlines()[0] == "epoch,train_loss,val_loss,val_acc"
    assert len((model_dir / "losscurve.csv").read_text().splitlines()) == 3


def test_train_reproducible(dataset_dir, model_dir, tmp_path):
    code = main(["train", "--dataset", str(dataset_dir / "dataset.jsonl"), "--arch", "gcn_gru", "--loss", "multi",
                 "--epochs", "2", "--seed", "1", "--out", str(tmp_path)] + SMALL)
    assert code == 0
    for name in ("model.json", "losscurve.csv"):
        assert (tmp_path / name).read_bytes() == (model_dir / name).read_bytes()


def test_eval_outputs(dataset_dir, model_dir, tmp_path):
    assert main(["eval", "--model", str(model_dir / "model.json"), "--dataset", str(dataset_dir / "dataset.jsonl"),
                 "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["n"] == 4 and 0 <= metrics["accuracy"] <= 1
    assert (tmp_path / "group_confusion.csv").exists()
    header = (tmp_path / "confusion.csv").read_text().splitlines()[0]
    assert header == "standing,walking,checkin,atm"


def test_infer(synth_dir, model_dir, tmp_path):
    assert main(["infer", "--model", str(model_dir / "model.json"), "--poses", str(synth_dir / "poses.jsonl"),
                 "--areas", str(synth_dir / "areas.json"), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "predictions.csv").read_text().splitlines()
    assert rows[0] == "video_id,person_id,start_frame,action_label,action_name,group_label"
    assert len(rows) == 41
    assert main(["infer", "--model", str(model_dir / "model.json"), "--poses", str(synth_dir / "poses.jsonl"),
                 "--out", str(tmp_path)]) == 2


def test_inputs_not_mutated(synth_dir, dataset_dir):
    before = {p: p.read_bytes() for p in synth_dir.glob("*.jsonl")}
    main(["build", "--poses", str(synth_dir / "poses.jsonl"), "--labels", str(synth_dir / "labels.csv"),
          "--areas", str(synth_dir / "areas.json"), "--out", str(dataset_dir / "again")])
    assert before == {p: p.read_bytes() for p in synth_dir.glob("*.jsonl")}


@pytest.mark.parametrize("argv", [[], ["fly"], ["synth"], ["train", "--dataset", "x", "--out", "y", "--arch", "rnn"],
                                  ["synth", "--out", "x", "--bogus", "1"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_data_errors(tmp_path):
    bad = tmp_path / "poses.jsonl"
    bad.write_text("{not json\n")
    assert main(["mine-areas", "--poses", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["synth", "--out", str(tmp_path / "s"), "--num-areas", "9"]) == 2
    assert main(["train", "--dataset", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "m")]) == 2


def test_divergence_exit_code(tmp_path):
    rng = np.random.default_rng(0)
    samples = [GraphSample(rng.choice([-3e38, 3e38], size=(20, 22, 2)), label, int(label > 2), f"s{i}")
               for i, label in enumerate([1, 2, 3, 4] * 10)]
    path = tmp_path / "d.jsonl"
    with open(path, "w") as fh:
        write_dataset_jsonl(samples, fh)
    code = main(["train", "--dataset", str(path), "--arch", "gcn", "--epochs", "1", "--out", str(tmp_path / "m"),
                 "--channels", "4,8,8", "--dtype", "float32"])
    assert code == 3


def test_write_report(tmp_path):
    y = np.array([1, 2, 3, 4] * 10)
    names = ("standing", "walking", "checkin", "atm")
    cm = ConfusionMatrix.from_labels(y, y, 4, 1, names)
    single = EvalResult(cm.accuracy, cm, None, 40)
    files = write_report(single, tmp_path / "single")
    assert {p.name for p in files} == {"confusion.csv", "metrics.json"}
    assert json.loads((tmp_path / "single" / "metrics.json").read_text()) == {"accuracy": 1.0, "n": 40}
    counts = np.loadtxt(tmp_path / "single" / "confusion.csv", delimiter=",", skiprows=1)
    assert np.trace(counts) == 40
    assert not (tmp_path / "single" / "group_confusion.csv").exists()
    g = ConfusionMatrix.from_labels((y > 2).astype(int), (y > 2).astype(int), 2, 0, ("no", "yes"))
    heat = build_heatmap(np.array([[5.0, 5.0], [15.0, 5.0]]), 10.0, (40, 20))
    multi = write_report(EvalResult(2 / 3, cm, g, 40), tmp_path / "multi", heat)
    assert {p.name for p in multi} == {"confusion.csv", "metrics.json", "group_confusion.csv", "heatmap.csv"}
    assert json.loads((tmp_path / "multi" / "metrics.json").read_text())["accuracy"] == 0.666667


def test_write_report_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    y = np.array([1, 2])
    cm = ConfusionMatrix.from_labels(y, y, 4, 1, "abcd")
    with pytest.raises(OSError):
        write_report(EvalResult(1.0, cm, None, 2), blocker / "sub")


def test_eval_unwritable_exit_code(dataset_dir, model_dir, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["eval", "--model", str(model_dir / "model.json"), "--dataset", str(dataset_dir / "dataset.jsonl"),
                 "--out", str(blocker / "sub")]) == 2
