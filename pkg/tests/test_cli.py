import json
import re
import subprocess
import sys

import pytest

from triattn.cli import main
from triattn.model import load_state
from triattn.synthetic import read_jsonl


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epochs": 1, "D": 4, "synthetic": {"n_train": 30, "n_test": 10}}))
    return str(path)


def test_no_args_prints_usage_and_exits_2(capsys):
    assert main([]) == 2
    assert "usage:" in capsys.readouterr().err


def test_module_entry_point_no_args():
    proc = subprocess.run([sys.executable, "-m", "triattn"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage:" in proc.stderr


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["demo", "--colour", "red"])
    assert exc.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_gradcheck_json(capsys):
    assert main(["gradcheck", "--variant", "tdp", "--seed", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["passed"] is True
    assert {r["integration"] for r in doc["reports"]} == {"add", "mul", "bili"}
    assert all(r["variant"] == "tdp" and r["seed"] == 1 for r in doc["reports"])


def test_gradcheck_to_file(tmp_path):
    out = tmp_path / "gc.json"
    assert main(["gradcheck", "--variant", "tadd", "--integration", "add", "--seeds", "0,1", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["reports"]) == 2


def test_demo_weights_sum_to_one(capsys):
    assert main(["demo"]) == 0
    out = capsys.readouterr().out
    assert "ScoreGrid" in out and "AttnWeights" in out and "embedding" in out
    block = out.split("AttnWeights A[i, j]:\n")[1].split("sum of weights")[0]
    weights = [float(x) for x in re.findall(r"-?\d+\.\d+", block)]
    assert len(weights) == 4 and abs(sum(weights) - 1.0) < 1e-5
    assert re.search(r"sum of weights: 1\.0{12}", out)


@pytest.mark.parametrize("variant", ["tadd", "trili-full", "trili-econ"])
def test_demo_variants(capsys, variant):
    assert main(["demo", "--variant", variant, "--seed", "2"]) == 0
    assert f"variant={variant}" in capsys.readouterr().out


def test_gen_writes_files(tmp_path, capsys):
    train, test = tmp_path / "train.jsonl", tmp_path / "test.jsonl"
    assert main(["gen", "--out", str(train), "--test-out", str(test), "--n-train", "12", "--n-test", "6",
                 "--seed", "4"]) == 0
    assert len(read_jsonl(train)) == 12 and len(read_jsonl(test)) == 6
    again = tmp_path / "again.jsonl"
    main(["gen", "--out", str(again), "--n-train", "12", "--n-test", "6", "--seed", "4"])
    assert again.read_bytes() == train.read_bytes()


def test_train_saves_state(tmp_path, capsys, small_config):
    out = tmp_path / "state.json"
    assert main(["train", "--mode", "c-bi", "--variant", "tadd", "--config", small_config, "--out", str(out)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["config"]["mode"] == "c_bi" and len(doc["epochs"]) == 1 and "test" in doc
    state, cfg = load_state(out)
    assert cfg.D == 4


def test_train_from_files(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    main(["gen", "--out", str(data), "--test-out", str(tmp_path / "t.jsonl"), "--n-train", "10", "--n-test", "4"])
    capsys.readouterr()
    assert main(["train", "--train", str(data), "--test", str(tmp_path / "t.jsonl"), "--epochs", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["test"]["accuracy"] >= 0


def test_ablate_csv(capsys, small_config):
    assert main(["ablate", "--variant", "tdp", "--seeds", "0-1", "--config", small_config]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("mechanism,variant,integration")
    assert [l.split(",")[0] for l in lines[1:]] == ["bi", "c_bi", "tri"]


def test_sweep_csv(tmp_path, small_config):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--variant", "tsdp", "--layers", "1-2", "--seed", "0", "--config", small_config,
                 "--out", str(out), "--plot-data", str(tmp_path / "p")]) == 0
    assert len(out.read_text().splitlines()) == 3
    assert (tmp_path / "p-tsdp.csv").exists()


def test_runtime_error_exits_1(tmp_path, capsys):
    assert main(["train", "--train", str(tmp_path / "missing.jsonl")]) == 1
    assert "triattn: error:" in capsys.readouterr().err


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synthetic": {"colour": 1}}))
    assert main(["gen", "--out", str(tmp_path / "x"), "--config", str(cfg)]) == 1
