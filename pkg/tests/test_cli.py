import json

import numpy as np
import pytest

from poisson_fbm.cli import EXIT_OK, EXIT_USAGE, main


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_simulate_writes_paths_and_manifest(tmp_path):
    assert run(tmp_path, "simulate", "--n", "2", "--replicas", "3", "--grid", "5") == EXIT_OK
    lines = (tmp_path / "paths.csv").read_text().splitlines()
    assert lines[0] == "replica,t,value" and len(lines) == 1 + 3 * 5
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "ok" and "paths.csv" in man["outputs"]
    assert man["constants"]["C"] == pytest.approx(0.60274984, rel=1e-6)
    assert not any(p.name.startswith(".partial") for p in tmp_path.iterdir())


def test_simulate_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "simulate", "--n", "2", "--replicas", "4", "--grid", "5", "--seed", "9") == EXIT_OK
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"] and ma["config_hash"] == mb["config_hash"]


def test_json_format_and_reflected_variant(tmp_path):
    assert run(tmp_path, "simulate", "--n", "2", "--replicas", "2", "--grid", "4", "--format", "json",
               "--variant", "reflected") == EXIT_OK
    data = json.loads((tmp_path / "paths.json").read_text())
    std = tmp_path / "std"
    assert run(std, "simulate", "--n", "2", "--replicas", "2", "--grid", "4", "--format", "json") == EXIT_OK
    # the reflected variant on the mirrored field reproduces the standard paths
    assert data["paths"] == json.loads((std / "paths.json").read_text())["paths"]


def test_hurst_one_half_rejected(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        run(tmp_path, "simulate", "--hurst", "0.5")
    assert info.value.code == EXIT_USAGE
    assert "(1/2, 1)" in capsys.readouterr().err


def test_convergence_needs_two_replicas(tmp_path):
    assert run(tmp_path, "convergence", "--replicas", "1") == EXIT_USAGE
    assert list(tmp_path.iterdir()) == []  # no partial output left behind


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 2.0, "replicas": 2, "grid": 4, "seed": 5}))
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--seed", "6", "--out", str(out)]) == EXIT_OK
    settings = json.loads((out / "manifest.json").read_text())["settings"]
    assert settings["seed"] == 6 and settings["n"] == 2.0 and settings["grid"] == 4
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"colour": 1}))
    with pytest.raises(SystemExit):
        main(["simulate", "--config", str(bad), "--out", str(out)])


def test_oracle_command(tmp_path):
    assert run(tmp_path, "oracle", "--replicas", "3", "--grid", "6") == EXIT_OK
    data = np.loadtxt(tmp_path / "oracle_paths.csv", delimiter=",", skiprows=1)
    assert data.shape == (18, 3)


def test_verify_kernel_suite(tmp_path):
    assert run(tmp_path, "verify", "kernel") == EXIT_OK
    res = json.loads((tmp_path / "verify_kernel.json").read_text())
    assert res["passed"] and res["normalization"]["max_rel_err"] < 1e-3
    assert "seconds" not in res["normalization"]


def test_convergence_small(tmp_path):
    assert run(tmp_path, "convergence", "--ns", "2", "3", "--replicas", "20", "--grid", "9") == EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    assert [r["n"] for r in rep["rows"]] == [2.0, 3.0]
    assert (tmp_path / "convergence.csv").exists() and (tmp_path / "variance.csv").exists()
