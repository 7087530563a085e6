import json
import subprocess
import sys

import pytest

from nsop.cli import run

SMALL_DATA = ["--dim", "2", "--modes", "12", "--D", "4", "--R", "1.0", "--nu", "0.1",
              "--t-final", "0.2", "--N", "60", "--d-H", "4", "--d-Y", "6"]


def test_basis_command(tmp_path):
    assert run(["basis", "--dim", "2", "--modes", "16", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "basis.txt").read_text().splitlines()
    assert len(lines) == 16
    meta = json.loads((tmp_path / "basis.json").read_text())
    assert meta["m"] == 16 and meta["dim"] == 2
    runs = json.loads((tmp_path / "run.json").read_text())
    assert runs["basis"]["config"]["modes"] == 16 and "numpy" in runs["basis"]["versions"]


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nsop.cli", "basis", "--modes", "4", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_gen_train_eval_chain(tmp_path):
    out = str(tmp_path)
    assert run(["gen-data", *SMALL_DATA, "--seed", "3", "--out", out]) == 0
    assert run(["train", "--hidden", "16", "--epochs", "20", "--out", out]) == 0
    assert (tmp_path / "model" / "weights.f64").exists()
    assert run(["eval", "--n-test", "20", "--out", out]) == 0
    rep = json.loads((tmp_path / "eval.json").read_text())
    assert 0 <= rep["relative_error"] < 1.5
    runs = json.loads((tmp_path / "run.json").read_text())
    assert set(runs) == {"gen-data", "train", "eval"}


def test_unknown_flag_exits_two_naming_flag(tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        run(["basis", "--bogus-flag", "1", "--out", str(tmp_path)])
    assert err.value.code == 2
    assert "--bogus-flag" in capsys.readouterr().err


def test_bad_values_exit_two(tmp_path, capsys):
    assert run(["basis", "--dim", "4", "--out", str(tmp_path)]) == 2
    assert "dim" in capsys.readouterr().err
    assert run(["simulate", "--dt", "10", "--out", str(tmp_path)]) == 2
    assert run(["train", "--optimizer", "lbfgs", "--out", str(tmp_path)]) == 2
    assert run(["sensors", "--epsilon", "-1", "--out", str(tmp_path)]) == 2
    assert not (tmp_path / "trajectory.nstrj").exists()


def test_config_file_layering(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dim": 3, "modes": 10}))
    assert run(["basis", "--config", str(cfg), "--modes", "6", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "basis.json").read_text())
    assert meta["dim"] == 3 and meta["m"] == 6
    cfg.write_text(json.dumps({"dim": 3, "colour": "red"}))
    assert run(["basis", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("{not json")
    assert run(["basis", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_missing_dataset_exits_four(tmp_path):
    assert run(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == 4


def test_corrupt_dataset_exits_four(tmp_path):
    out = str(tmp_path)
    assert run(["gen-data", *SMALL_DATA, "--N", "5", "--out", out]) == 0
    raw = bytearray((tmp_path / "inputs.f64").read_bytes())
    raw[3] ^= 0xFF
    (tmp_path / "inputs.f64").write_bytes(bytes(raw))
    assert run(["train", "--epochs", "1", "--out", out]) == 4


def test_diverging_training_exits_three(tmp_path):
    out = str(tmp_path)
    assert run(["gen-data", *SMALL_DATA, "--R", "50", "--out", out]) == 0
    code = run(["train", "--epochs", "50", "--learning-rate", "1e8", "--optimizer", "sgd",
                "--clamp", "false", "--out", out])
    assert code == 3


def test_simulate_and_verify(tmp_path):
    out = str(tmp_path)
    assert run(["simulate", "--modes", "12", "--t-final", "0.1", "--out", out]) == 0
    assert (tmp_path / "trajectory.nstrj").exists()
    assert run(["simulate", "--init", "1,0.5", "--modes", "8", "--t-final", "0.05", "--out", out]) == 0
    assert run(["verify", "--modes", "12", "--t-final", "0.1", "--n-traj", "3", "--n-pairs", "3",
                "--N-values", "10,100", "--replicates", "2", "--n-test", "5", "--out", out]) == 0
    for name in ("energy.csv", "lipschitz.json", "projection.json", "operator.json", "size.json"):
        assert (tmp_path / name).exists()
    summary = json.loads((tmp_path / "run.json").read_text())["verify"]["summary"]
    assert summary["energy_ok"] and summary["operator_identity_ok"]


def test_sensors_command(tmp_path):
    out = str(tmp_path)
    assert run(["sensors", "--D", "4", "--sweep", "3,5", "--probe", "24", "--n-max", "9",
                "--epsilon", "2", "--out", out]) == 0
    sweep = json.loads((tmp_path / "kappa_sweep.json").read_text())
    assert sweep["kappas"][0] > sweep["kappas"][1]
    assert (tmp_path / "required_sensors.json").exists()


def _artifacts(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "run.json"}


def test_repeated_runs_are_byte_identical(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert run(["gen-data", *SMALL_DATA, "--seed", "5", "--out", str(d)]) == 0
        assert run(["train", "--hidden", "8", "--epochs", "5", "--seed", "5", "--out", str(d)]) == 0
        assert run(["eval", "--n-test", "10", "--out", str(d)]) == 0
    a, b = (_artifacts(d) for d in dirs)
    assert a.keys() == b.keys() and len(a) >= 6
    assert all(a[k] == b[k] for k in a)
