import json
import subprocess
import sys

import numpy as np
import pytest

from ssd import detector as det
from ssd import persist
from ssd.data import load_features, save_features
from ssd.metrics import evaluate_scores
from scenarios import run, scenario_a, scenario_b, snapshot


def test_scenario_a_auroc(tmp_path):
    scenario_a(tmp_path)
    report = json.loads((tmp_path / "eval.json").read_text())
    assert report["schema"] == "ssd-eval/1"
    assert report["auroc"] >= 0.95


def test_evaluate_matches_library(tmp_path):
    f = scenario_a(tmp_path)
    model = persist.load_model(tmp_path / "model.json")
    direct = evaluate_scores(
        det.ssd_scores(model, load_features(f["test"])), det.ssd_scores(model, load_features(f["ood"]))
    )
    report = json.loads((tmp_path / "eval.json").read_text())
    assert (report["auroc"], report["aupr"], report["fpr_at_tpr"]) == (
        direct.auroc, direct.aupr, direct.fpr_at_tpr)


def test_score_and_classify_outputs(tmp_path):
    f = scenario_a(tmp_path)
    lines = (tmp_path / "s.tsv").read_text().splitlines()
    assert lines[0] == "row\tscore"
    model = persist.load_model(tmp_path / "model.json")
    scores = det.ssd_scores(model, load_features(f["ood"]))
    assert [float(l.split("\t")[1]) for l in lines[1:]] == scores.tolist()
    flags = (tmp_path / "flags.tsv").read_text().splitlines()
    assert flags[0] == "row\tscore\toutlier"
    assert {l.split("\t")[2] for l in flags[1:]} <= {"true", "false"}


@pytest.mark.parametrize("scenario", [scenario_a, scenario_b])
def test_scenarios_reproducible(tmp_path, scenario):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    scenario(a, seed=3)
    scenario(b, seed=3)
    assert snapshot(a) == snapshot(b)


def test_fewshot_report_layout(tmp_path):
    scenario_b(tmp_path)
    rows = (tmp_path / "fs.tsv").read_text().splitlines()
    assert rows[0].startswith("detector\tauroc")
    assert [r.split("\t")[0] for r in rows[1:]] == ["ssd", "ssd_k"]
    assert isinstance(persist.load(tmp_path / "fs.json"), det.FewShotModel)
    aug = (tmp_path / "aug.tsv").read_text().splitlines()
    assert [r.split("\t")[0] for r in aug[1:]] == ["1", "5"]


def test_train_toy_outputs(tmp_path):
    assert run("train-toy", "--steps", 20, "--seed", 1, "--trace", tmp_path / "trace.csv",
               "--encoder-out", tmp_path / "enc.json", "--out", tmp_path / "toy.tsv") == 0
    trace = (tmp_path / "trace.csv").read_text().splitlines()
    assert trace[0] == "step,loss" and len(trace) == 22
    table = (tmp_path / "toy.tsv").read_text().splitlines()
    assert [r.split("\t")[0] for r in table] == ["encoder", "random", "trained"]
    assert json.loads((tmp_path / "enc.json").read_text())["schema"] == "ssd-toy-encoder/1"


def test_fit_zero_clusters_is_usage_error(tmp_path, capsys):
    save_features(np.ones((4, 2)), tmp_path / "x.csv")
    code = run("fit", "--features", tmp_path / "x.csv", "--clusters", 0, "--out", tmp_path / "m.json")
    assert code == 2
    assert "--clusters" in capsys.readouterr().err
    assert not (tmp_path / "m.json").exists()


def test_unknown_flag(capsys):
    assert run("score", "--bogus") == 2


def test_score_dimension_mismatch(tmp_path, capsys):
    rng = np.random.default_rng(0)
    save_features(rng.normal(size=(20, 4)), tmp_path / "train.csv")
    save_features(rng.normal(size=(3, 3)), tmp_path / "bad.csv")
    assert run("fit", "--features", tmp_path / "train.csv", "--out", tmp_path / "m.json") == 0
    assert run("score", "--model", tmp_path / "m.json", "--features", tmp_path / "bad.csv") == 1
    assert "expects d=4, got d=3" in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert run("score", "--model", tmp_path / "nope.json", "--features", tmp_path / "x.csv") == 1
    assert "error" in capsys.readouterr().err


def test_schema_mismatch_on_model_load(tmp_path, capsys):
    (tmp_path / "m.json").write_text('{"schema": "ssd-model/2"}')
    save_features(np.ones((2, 2)), tmp_path / "x.csv")
    assert run("score", "--model", tmp_path / "m.json", "--features", tmp_path / "x.csv") == 1
    assert "ssd-model/2" in capsys.readouterr().err


def test_calibration_is_not_a_model(tmp_path, capsys):
    persist.save(det.calibrate([1.0, 2.0]), tmp_path / "cal.json")
    save_features(np.ones((2, 2)), tmp_path / "x.csv")
    assert run("score", "--model", tmp_path / "cal.json", "--features", tmp_path / "x.csv") == 1


def test_threads_env_does_not_change_output(tmp_path):
    rng = np.random.default_rng(1)
    save_features(rng.normal(size=(200, 3)), tmp_path / "train.ssdf")
    save_features(rng.normal(size=(9000, 3)), tmp_path / "big.ssdf")
    assert run("fit", "--features", tmp_path / "train.ssdf", "--clusters", 2,
               "--out", tmp_path / "m.json") == 0
    outputs = []
    for threads in ("1", "3"):
        proc = subprocess.run(
            [sys.executable, "-m", "ssd", "score", "--model", tmp_path / "m.json",
             "--features", tmp_path / "big.ssdf"],
            capture_output=True, env={"SSD_THREADS": threads, "PATH": ""}, check=True,
        )
        outputs.append(proc.stdout)
    assert outputs[0] == outputs[1] and outputs[0].startswith(b"row\tscore\n")
