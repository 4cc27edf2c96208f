import json

import numpy as np
import pandas as pd
import pytest

from diamondlab.cli import main
from diamondlab.core.disorder import seed_word


@pytest.fixture(autouse=True)
def results_dir(tmp_path, monkeypatch):
    path = tmp_path / "results"
    monkeypatch.setenv("RESULTS_DIR", str(path))
    return path


def test_lattice_info(capsys):
    assert main(["lattice", "info", "--b", "2", "--s", "3", "--n", "2"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["regime"] == "b<s"
    assert info["edges"] == 36


def test_iterate_writes_csv(capsys):
    assert main(["moments", "iterate", "--b", "2", "--s", "2", "--map", "Mn_beq", "--beta", "1", "--n", "10", "--csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "k,value"
    assert len(lines) == 12


def test_regime_errors_exit_with_2(capsys):
    code = main(["moments", "iterate", "--b", "2", "--s", "3", "--map", "Mn_beq", "--beta", "1", "--n", "10"])
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")
    assert main(["fluct", "clt", "--b", "2", "--s", "3", "--beta-hat", "1", "--n", "4", "--no-save"]) == 2
    assert "invalid configuration" in capsys.readouterr().err


def test_sample_w_saves_a_record(results_dir, capsys):
    argv = ["mc", "sample-w", "--b", "2", "--s", "2", "--n", "2", "--beta", "0.4", "--replicates", "8", "--prefix", "w"]
    assert main(argv) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["statistics"]["count"] == 8
    assert (results_dir / "w.json").exists()
    assert (results_dir / "w.csv").exists()

    assert main(["experiment", "summarize", str(results_dir)]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["experiment"] == "sample-w"


def test_experiment_run_from_config(tmp_path, results_dir, capsys):
    config = {
        "experiment": "variance-flow",
        "lattice": {"b": 3, "s": 2, "n": 40},
        "schedule": {"kind": "fixed", "beta": 0.025},
    }
    path = tmp_path / "flow.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    out_path = tmp_path / "out.json"
    assert main(["experiment", "run", str(path), "--no-save", "--out", str(out_path)]) == 0
    result = json.loads(out_path.read_text(encoding="utf-8"))
    assert result["report"]["target"] == pytest.approx(1.0)
    assert len(result["rows"]) == 41
    assert not list(results_dir.glob("*.json"))


def test_invalid_config_file(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"experiment": "sample-w", "lattice": {"b": 2, "s": 2}}), encoding="utf-8")
    assert main(["experiment", "run", str(path)]) == 2
    assert "invalid configuration" in capsys.readouterr().err


def test_discrete_disorder_file(tmp_path, capsys):
    law = tmp_path / "law.json"
    law.write_text(json.dumps({"family": "discrete", "values": [-2.0, 0.5], "probs": [0.2, 0.8]}), encoding="utf-8")
    argv = ["moments", "iterate", "--b", "2", "--s", "2", "--map", "Mn_beq", "--beta", "1", "--n", "50", "--disorder", str(law)]
    assert main(argv) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["kind"] == "Mn_beq"
    assert out["final"] > 0


def test_iterate_emits_a_trace_file(tmp_path):
    path = tmp_path / "trace.csv"
    argv = ["moments", "iterate", "--b", "2", "--s", "2", "--map", "Mn_beq", "--beta-hat", "1", "--n", "10", "--emit", str(path)]
    assert main(argv) == 0
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    assert lines[0] == "k,value"
    assert len(lines) == 12


def test_sample_w_writes_one_row_per_replicate(tmp_path, results_dir):
    path = tmp_path / "results.csv"
    argv = [
        "mc", "sample-w", "--b", "2", "--s", "2", "--n", "2", "--beta-schedule", "beq", "--beta-hat", "1",
        "--replicates", "6", "--seed", "3", "--no-save", "--out", str(path),
    ]
    assert main(argv) == 0
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["n", "replicate", "seed", "W", "logW"]
    assert len(frame) == 6
    assert frame["seed"].tolist() == [seed_word(3, i) for i in range(6)]
    assert np.allclose(frame["logW"], np.log(frame["W"]))
    assert not list(results_dir.glob("*"))


def test_beta_schedule_needs_its_parameter(capsys):
    argv = ["mc", "sample-w", "--b", "2", "--s", "2", "--n", "2", "--beta-schedule", "edge", "--replicates", "2", "--no-save"]
    assert main(argv) == 2
    assert "invalid configuration" in capsys.readouterr().err


def test_sample_l_writes_samples_csv(tmp_path):
    path = tmp_path / "samples.csv"
    argv = ["limits", "sample-L", "--b", "2", "--s", "3", "--r", "0.5", "--depth", "2", "--samples", "5", "--no-save", "--out", str(path)]
    assert main(argv) == 0
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["replicate", "seed", "value"]
    assert len(frame) == 5


def test_single_segment_lattice_runs(capsys):
    argv = ["mc", "sample-w", "--b", "3", "--s", "1", "--n", "2", "--beta", "0.5", "--edge", "--replicates", "4", "--no-save"]
    assert main(argv) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["statistics"]["count"] == 4
    assert out["rows"][0]["engine"] == "lattice"
