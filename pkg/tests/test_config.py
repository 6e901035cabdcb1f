import json

import numpy as np
import pytest

from nvraman.config import ConfigError, ExperimentConfig
from nvraman.sweep import DetuningMap, FluctuationCurve, StirapMap

INI = """
[drive]
scheme = stirap
sigma_us = 0.7

[decoherence]
gamma_phi_mhz = 0.05

[fit]
free = delta_minus, delta_plus
"""


def test_defaults_build_objects():
    cfg = ExperimentConfig.from_mapping({}, env={})
    pr = cfg.protocol()
    assert pr.scheme == "srt" and pr.raman_detuning == 5.0 and pr.tau is None
    assert cfg.tau_grid().size == 121
    spec = cfg.sweep_spec()
    assert isinstance(spec.kind, StirapMap) and len(spec.kind.lambda_grid) == 21


def test_ini_values_are_typed():
    cfg = ExperimentConfig.from_ini_text(INI, env={})
    pr = cfg.protocol()
    assert pr.scheme == "stirap" and pr.sigma == 0.7
    assert pr.gamma_phi == 0.05 and len(pr.channels) == 1
    assert set(cfg.fit_bounds()) == {"delta_minus", "delta_plus"}


@pytest.mark.parametrize("text", [
    "[drive]\nomega_mhz = 2\n",
    "[drives]\nscheme = srt\n",
    "[drive]\nOmega_minus_mhz = 2\n",
    "[drive]\nscheme = lambda\n",
    "[drive]\nsigma_us = fast\n",
    "[run]\nrtol = nan\n",
    "[fit]\nfree = omega\n",
    "[fit]\ngamma_phi_bounds_mhz = 0.2, 0.1\n",
    "no section header\n",
])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini_text(text, env={})


def test_env_override():
    cfg = ExperimentConfig.from_ini_text(INI, env={"NVRAMAN_DRIVE__SIGMA_US": "0.9", "OTHER": "x"})
    assert cfg["drive"]["sigma_us"] == 0.9
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini_text(INI, env={"NVRAMAN_DRIVE__SIGMA": "0.9"})


def test_round_trips(tmp_path):
    cfg = ExperimentConfig.from_ini_text(INI, env={}).with_overrides({"run.seed": 4, "drive.tau_us": "2.5"})
    (tmp_path / "c.ini").write_text(cfg.to_ini())
    assert ExperimentConfig.load(tmp_path / "c.ini", env={}) == cfg
    (tmp_path / "m.json").write_text(json.dumps({"command": "scan", "config": cfg.to_dict()}))
    assert ExperimentConfig.load(tmp_path / "m.json", env={}) == cfg
    assert json.loads(cfg.to_json())["drive"]["tau_us"] == 2.5


def test_missing_file():
    with pytest.raises(ConfigError):
        ExperimentConfig.load("/nonexistent/config.ini", env={})


def test_sweep_kinds():
    cfg = ExperimentConfig.from_mapping({"sweep": {"kind": "detuning", "delta_plus_points": 5}}, env={})
    k = cfg.sweep_spec().kind
    assert isinstance(k, DetuningMap) and len(k.delta_plus_grid) == 5
    np.testing.assert_allclose(np.asarray(k.delta_minus_grid)[[0, -1]], [-1.0, 1.0])
    cfg = ExperimentConfig.from_mapping({"sweep": {"kind": "dz", "dz_values_um": "0, 2.5"}}, env={})
    k = cfg.sweep_spec().kind
    assert isinstance(k, FluctuationCurve) and k.variable == "dz" and tuple(k.values) == (0.0, 2.5)
