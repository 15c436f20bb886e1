import json
import os

import pytest

from floatlab.cli import main


def run_cli(*argv):
    return main(list(argv))


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {
        "mode": "float",
        "seed": 9,
        "data": {"train": str(tmp_path / "train.fltd"), "test": str(tmp_path / "test.fltd")},
        "out_dir": str(tmp_path / "run"),
        "model": {"channels": [6, 8], "strides": [1, 2]},
        "train": {
            "epochs": 1,
            "batch_size": 32,
            "attack": {"name": "pgd", "epsilon": 0.08, "steps": 2, "step_size": 0.05},
        },
        "eval": {"lambda_n_set": [0.0, 1.0], "lambda_th": 0.0},
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def make_data(tmp_path):
    assert run_cli("synth", "--classes", "2", "--per-class", "48", "--seed", "1",
                   "--out", str(tmp_path / "train.fltd")) == 0
    assert run_cli("synth", "--classes", "2", "--per-class", "16", "--seed", "2",
                   "--out", str(tmp_path / "test.fltd")) == 0


class TestHappyPath:
    def test_synth_train_eval_sweep_inspect(self, tmp_path, capsys):
        make_data(tmp_path)
        cfg = write_config(tmp_path)
        capsys.readouterr()
        assert run_cli("train", "--config", str(cfg)) == 0
        out = json.loads(capsys.readouterr().out)
        ckpt = out["checkpoint_path"]
        assert os.path.exists(ckpt)

        assert run_cli("eval", "--checkpoint", ckpt, "--dataset", str(tmp_path / "test.fltd"),
                       "--lambda-n", "0.0", "--attack", "pgd2", "--epsilon", "0.08") == 0
        ev = json.loads(capsys.readouterr().out)
        assert 0 <= ev["ca_percent"] <= 100

        assert run_cli("sweep", "--checkpoint", ckpt, "--dataset", str(tmp_path / "test.fltd"),
                       "--lambda-n-set", "0.0,0.2,0.7,1.0", "--attacks", "pgd2",
                       "--out-dir", str(tmp_path / "sw"), "--epsilon", "0.08") == 0
        capsys.readouterr()
        rows = (tmp_path / "sw" / "tradeoff.csv").read_text().strip().splitlines()
        assert len(rows) == 5

        assert run_cli("inspect", "--checkpoint", ckpt) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["total_weights"] > 0

    def test_cost_writes_outputs(self, tmp_path, capsys):
        csv_path = tmp_path / "delays.csv"
        json_path = tmp_path / "totals.json"
        assert run_cli("cost", "--preset", "wrn16_8", "--variant", "oat",
                       "--csv", str(csv_path), "--json", str(json_path)) == 0
        body = json.loads(capsys.readouterr().out)
        assert csv_path.exists() and json_path.exists()
        assert body["params"] == json.loads(json_path.read_text())["params"]

    def test_config_overrides(self, tmp_path, capsys):
        make_data(tmp_path)
        cfg = write_config(tmp_path)
        capsys.readouterr()
        assert run_cli("train", "--config", str(cfg),
                       "--set", "train.epochs=0",
                       "--set", f"out_dir={json.dumps(str(tmp_path / 'run0'))}") == 0
        out = json.loads(capsys.readouterr().out)
        assert out["epochs"] == 0
        metrics = (tmp_path / "run0" / "metrics.csv").read_text().strip().splitlines()
        assert len(metrics) == 1


class TestDeterminism:
    def test_identical_runs_produce_identical_bytes(self, tmp_path, capsys):
        import shutil

        make_data(tmp_path)
        cfg = write_config(tmp_path, name="a.json", out_dir=str(tmp_path / "runA"))
        capsys.readouterr()
        assert run_cli("train", "--config", str(cfg)) == 0
        a_metrics = (tmp_path / "runA" / "metrics.csv").read_bytes()
        a_ckpt = (tmp_path / "runA" / "checkpoint.flc").read_bytes()
        shutil.rmtree(tmp_path / "runA")
        assert run_cli("train", "--config", str(cfg)) == 0
        capsys.readouterr()
        assert (tmp_path / "runA" / "metrics.csv").read_bytes() == a_metrics
        assert (tmp_path / "runA" / "checkpoint.flc").read_bytes() == a_ckpt


class TestExitCodes:
    def test_missing_dataset_is_config_exit(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert run_cli("train", "--config", str(cfg)) == 2
        err = capsys.readouterr().err
        assert "error [config]" in err

    def test_corrupt_dataset_is_data_exit(self, tmp_path, capsys):
        (tmp_path / "train.fltd").write_bytes(b"garbage")
        (tmp_path / "test.fltd").write_bytes(b"garbage")
        cfg = write_config(tmp_path)
        assert run_cli("train", "--config", str(cfg)) == 3
        assert "error [data]" in capsys.readouterr().err

    def test_unknown_config_key_is_config_exit(self, tmp_path, capsys):
        make_data(tmp_path)
        cfg = write_config(tmp_path, name="bad.json", bogus_key=True)
        assert run_cli("train", "--config", str(bad_path(tmp_path))) == 2

    def test_missing_config_file(self, tmp_path, capsys):
        assert run_cli("train", "--config", str(tmp_path / "nope.json")) == 2

    def test_unknown_attack_exit(self, tmp_path, capsys):
        make_data(tmp_path)
        cfg = write_config(tmp_path)
        assert run_cli("train", "--config", str(cfg)) == 0
        capsys.readouterr()
        ckpt = str(tmp_path / "run" / "checkpoint.flc")
        assert run_cli("sweep", "--checkpoint", ckpt, "--dataset", str(tmp_path / "test.fltd"),
                       "--lambda-n-set", "0.0", "--attacks", "autoattack",
                       "--out-dir", str(tmp_path / "sw")) == 2

    def test_bad_override_format(self, tmp_path):
        cfg = write_config(tmp_path)
        with pytest.raises(SystemExit) as exc:
            run_cli("train", "--config", str(cfg), "--set", "no_equals_sign")
        assert exc.value.code == 2


def bad_path(tmp_path):
    return tmp_path / "bad.json"
