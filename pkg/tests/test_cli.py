import json

import pytest

from nvraman.cli import EXIT_CONFIG, EXIT_OK, main

SMALL_MAP = """
[sweep]
kind = stirap
lambda_points = 3
sigma_points = 2
audit = false
"""


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for k in list(__import__("os").environ):
        if k.startswith("NVRAMAN_"):
            monkeypatch.delenv(k)


def test_levels(capsys):
    assert main(["levels"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "omega_minus" in out and "1800.732500" in out and "3939.267500" in out


def test_run_writes_manifest(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["run", "--out", str(out)]) == EXIT_OK
    data = json.loads(out.read_text())
    man = json.loads((tmp_path / "r.json.json").read_text())
    assert data["tau_us"] == pytest.approx(1.25) and data["P_p1"] > 0.9
    assert man["command"] == "run" and man["data_file"] == "r.json"


def test_scan_rerun_is_byte_identical(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[sequence]\ntau_points = 11\ntau_stop_us = 2\n[signal]\nsynthesize = true\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["scan", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["scan", "--config", str(a) + ".json", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_map_rerun_is_byte_identical(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL_MAP)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["map", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["map", "--config", str(a) + ".json", "--out", str(b), "--jobs", "2"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert json.loads((tmp_path / "a.csv.json").read_text())["grid"]["shape"] == [3, 2]


def test_config_errors_exit_2(tmp_path, monkeypatch, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[drive]\nomega_mhz = 2\n")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    monkeypatch.setenv("NVRAMAN_DRIVE__SIGMA_US", "wide")
    assert main(["levels"]) == EXIT_CONFIG
    assert "drive.sigma_us" in capsys.readouterr().err


def test_physics_rejection_exits_2(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[nv]\nd_mhz = -1\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r.json")]) == EXIT_CONFIG


def test_waveform(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[drive]\ntau_us = 0.5\nsample_rate_gsps = 10\n")
    out = tmp_path / "w.csv"
    assert main(["waveform", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    man = json.loads((tmp_path / "w.csv.json").read_text())
    assert man["waveform"]["n_samples"] == 5000
    assert len(out.read_text().splitlines()) == 5001


def test_fit_on_synthetic_data(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[drive]\ntau_us = 6\n[sequence]\ntau_points = 30\n[decoherence]\ngamma_phi_mhz = 0.05\n"
                   "[fit]\nfree = gamma_phi\nrestarts = 0\nsynthetic_counts = 1e9\n")
    out = tmp_path / "f.json"
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["params"]["gamma_phi"] == pytest.approx(0.05, abs=1e-3)
