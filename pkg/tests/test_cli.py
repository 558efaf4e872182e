import json

import pytest

from spheremotion.cli import main
from spheremotion.harness import Scenario, velocity_step_scenario
from spheremotion.mlp import load_model


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "step.json"
    path.write_text(json.dumps(velocity_step_scenario(duration=0.5).to_dict()))
    return path


def test_run_writes_results(tmp_path, scenario_file, capsys):
    out = tmp_path / "out"
    assert main(["run", str(scenario_file), "--seed", "3", "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"telemetry.csv", "metrics.json", "scenario.json"}
    assert json.loads((out / "scenario.json").read_text())["seed"] == 3
    assert "velocity" in capsys.readouterr().out


def test_run_default_output_dir(tmp_path, scenario_file, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["run", str(scenario_file)]) == 0
    name = Scenario.load(scenario_file).name
    assert (tmp_path / "results" / name / "telemetry.csv").exists()


def test_suite(tmp_path, scenario_file, capsys):
    assert main(["suite", str(tmp_path), "--out", str(tmp_path / "res")]) == 0
    assert (tmp_path / "res" / "metrics_table.csv").exists()
    assert capsys.readouterr().out.startswith("scenario")


def test_train_mlp(tmp_path, capsys):
    out = tmp_path / "m.json"
    code = main(["train-mlp", "--grid", "0:1:4,-0.2:0.2:5", "--hidden", "4", "--epochs", "50", "--out", str(out)])
    assert code == 0
    assert load_model(out).layer_sizes == (2, 4, 1)
    assert "20 samples" in capsys.readouterr().out


def test_bad_grid_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train-mlp", "--grid", "nonsense"])
    assert exc.value.code != 0


def test_check(capsys):
    assert main(["check"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and all(line.startswith("PASS") for line in lines)


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "duration": 0}))
    assert main(["run", str(bad)]) == 1
    assert main(["suite", str(tmp_path / "empty")]) == 1
    assert "error" in capsys.readouterr().err
