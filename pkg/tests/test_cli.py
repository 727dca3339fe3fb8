import json
import subprocess
import sys

import pytest

from edgekd import cli, dataio, nncore
from edgekd.experiment import resolve_methods

SMALL_HP = {"student_hidden": [8], "teacher_hidden": [16], "local_epochs": 2, "teacher_epochs": 2, "kd_epochs": 2,
            "finetune_epochs": 1, "rounds": 2, "client_fraction": 0.5, "student_lr": 0.01, "teacher_lr": 0.001}


@pytest.fixture
def config(tmp_path):
    cfg = {"seed": 3, "methods": ["local"],
           "scenario": {"source": "synthetic", "generator": {"n_devices": 4, "frames_per_device": 120}},
           "hyperparams": SMALL_HP}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def _files(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_minimal_run(config, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(config), "--out", str(out)]) == 0
    assert sorted(p.name for p in (out / "reports").iterdir()) == ["local.json"]
    summary = json.loads((out / "summary.json").read_text())
    assert [r["method"] for r in summary["summary"]] == ["local"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and len(manifest["config_hash"]) == 64
    report = json.loads((out / "reports/local.json").read_text())
    assert report["config_hash"] == manifest["config_hash"] and report["seed"] == 3


def test_ensemble_pulls_in_members(config, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(config), "--out", str(out), "--methods", "ensemble"]) == 0
    assert sorted(p.stem for p in (out / "reports").iterdir()) == ["dpfed", "ensemble", "kd_smote", "local"]
    audit = json.loads((out / "audit.json").read_text())
    assert audit["real_rows"] == 0 and audit["total_rows"] > 0
    assert (out / "telemetry/dpfed.jsonl").exists()
    teacher = nncore.load_weights(out / "models/teacher_smote.bin")
    assert teacher.layer_sizes == [3, 16, 2]


def test_run_is_byte_identical(config, tmp_path):
    args = ["run", "--config", str(config), "--methods", "local,fedavg,kd_scr"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_seed_override_changes_results(config, tmp_path):
    cli.main(["run", "--config", str(config), "--out", str(tmp_path / "a")])
    cli.main(["run", "--config", str(config), "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a/reports/local.json").read_bytes() != (tmp_path / "b/reports/local.json").read_bytes()


def test_unknown_method(config, tmp_path, capsys):
    assert cli.main(["run", "--config", str(config), "--out", str(tmp_path / "o"), "--methods", "bogus"]) == 2
    err = _error(capsys)
    assert err["error"] == "config" and err["exit"] == 2 and "bogus" in err["message"]


def test_missing_scenario(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"methods": ["local"]}))
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "scenario" in _error(capsys)["message"]


def test_invalid_hyperparameter(config, tmp_path, capsys):
    cfg = json.loads(config.read_text())
    cfg["hyperparams"]["alpha"] = 1.5
    config.write_text(json.dumps(cfg))
    assert cli.main(["run", "--config", str(config), "--out", str(tmp_path / "o")]) == 2
    assert _error(capsys)["error"] == "config"


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_gen_scenario_twice_identical(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-scenario", "--seed", "1", "--out", str(tmp_path / name)]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    sc = dataio.read_scenario(tmp_path / "a")
    assert len(sc.devices) == 20


def test_stats_on_serialized_scenario(tmp_path, capsys):
    gen = tmp_path / "gen.json"
    gen.write_text(json.dumps({"n_devices": 3, "frames_per_device": 40}))
    cli.main(["gen-scenario", "--config", str(gen), "--out", str(tmp_path / "s")])
    capsys.readouterr()
    assert cli.main(["stats", str(tmp_path / "s"), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["device_count"] == 3 and doc["total_frames"] == 120


def test_stats_on_csv_dir(tmp_path, capsys):
    d = tmp_path / "nodes"
    d.mkdir()
    (d / "a.csv").write_text("f,err\n1,1\n2,0\n3,1\n")
    (d / "b.csv").write_text("f,err\n1,0\n2,0\n3,1\n4,0\n")
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"columns": {"f": "feature", "err": "label"}}))
    assert cli.main(["stats", str(d), "--schema", str(schema), "--per-device"]) == 0
    out = capsys.readouterr().out
    assert "devices: 2" in out and "frames: 7" in out and "0.4286" in out


def test_stats_on_empty_directory(tmp_path, capsys):
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"columns": {"f": "feature", "err": "label"}}))
    (tmp_path / "empty").mkdir()
    assert cli.main(["stats", str(tmp_path / "empty"), "--schema", str(schema)]) == 3
    assert _error(capsys)["error"] == "data"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "edgekd", "stats", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["exit"] == 2


def test_resolve_methods_order():
    assert resolve_methods(["ensemble", "tf_kd"]) == ["local", "dpfed", "kd_smote", "tf_kd", "ensemble"]
