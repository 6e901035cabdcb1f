"""Experiment configuration: sectioned INI with unit-suffixed keys.

Every key is declared in ``SCHEMA``; anything else is rejected. Values can be
overridden from the environment as ``NVRAMAN_<SECTION>__<KEY>`` (for example
``NVRAMAN_DRIVE__OMEGA_MINUS_MHZ=1.9``). A resolved config serializes to a
JSON manifest that parses back to the same values.
"""

from __future__ import annotations

import configparser
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Union

import numpy as np

from .experiment import NUCLEAR_MODES, Protocol, SignalModel
from .fitting import FIT_PARAMETERS, FitConfig
from .nv import EnvironmentShift, NVParams
from .propagator import IntegratorConfig
from .sweep import DetuningMap, FluctuationCurve, StirapMap, SweepSpec

ENV_PREFIX = "NVRAMAN_"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending ``section.key``."""


# --- value parsers ------------------------------------------------------------


def _float(v) -> float:
    if isinstance(v, bool):
        raise ValueError("expected a number")
    x = float(v)
    if not math.isfinite(x):
        raise ValueError("must be finite")
    return x


def _opt_float(v) -> Optional[float]:
    if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none", "auto")):
        return None
    return _float(v)


def _int(v) -> int:
    if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
        raise ValueError("expected an integer")
    return int(v)


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _float_list(v) -> list[float]:
    items = v if isinstance(v, (list, tuple)) else [s for s in str(v).split(",") if s.strip()]
    return [_float(x) for x in items]


def _str_list(v) -> list[str]:
    items = v if isinstance(v, (list, tuple)) else str(v).split(",")
    return [str(x).strip() for x in items if str(x).strip()]


def _choice(*options: str) -> Callable[[Any], str]:
    def parse(v) -> str:
        s = str(v).strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _bounds(v) -> list[float]:
    lo_hi = _float_list(v)
    if len(lo_hi) != 2 or not lo_hi[0] < lo_hi[1]:
        raise ValueError("expected 'lo, hi' with lo < hi")
    return lo_hi


def _path(v) -> str:
    return str(v).strip()


_nv = NVParams()

SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "nv": {
        "d_mhz": (_float, _nv.D),
        "gamma_e_mhz_per_gauss": (_float, _nv.gamma_e),
        "gamma_n_mhz_per_gauss": (_float, _nv.gamma_n),
        "a_mhz": (_float, _nv.A),
        "b_z_gauss": (_float, _nv.B_z),
        "dd_dt_mhz_per_k": (_float, _nv.dD_dT),
        "dbz_dz_gauss_per_um": (_float, _nv.dBz_dz),
    },
    "environment": {
        "dt_k": (_float, 0.0),
        "dz_um": (_float, 0.0),
    },
    "drive": {
        "scheme": (_choice("srt", "stirap"), "srt"),
        "raman_detuning_mhz": (_float, 5.0),
        "detuning_minus_mhz": (_float, 0.0),
        "detuning_plus_mhz": (_float, 0.0),
        "omega_minus_mhz": (_float, 2.0),
        "omega_plus_mhz": (_float, 2.0),
        "sigma_us": (_float, 0.85),
        "separation_us": (_float, 1.2),
        "tau_us": (_opt_float, None),
        "phase_minus_rad": (_float, 0.0),
        "phase_plus_rad": (_float, 0.0),
        "field_conversion_minus_gauss_per_mhz": (_opt_float, None),
        "field_conversion_plus_gauss_per_mhz": (_opt_float, None),
        "sample_rate_gsps": (_float, 16.0),
        "waveform_format": (_choice("csv", "f32"), "csv"),
    },
    "sequence": {
        "init": (_choice("ideal", "none"), "ideal"),
        "prepare": (_choice("ideal", "physical", "none"), "ideal"),
        "readout_pi": (_choice("ideal", "physical"), "ideal"),
        "pi_rabi_mhz": (_float, 0.5),
        "nuclear": (_choice(*NUCLEAR_MODES), "polarized_plus"),
        "tau_start_us": (_float, 0.0),
        "tau_stop_us": (_float, 6.0),
        "tau_points": (_int, 121),
        "scan_method": (_choice("auto", "clip", "trajectory"), "auto"),
    },
    "decoherence": {
        "gamma_phi_mhz": (_float, 0.0),
        "gamma_1_mhz": (_float, 0.0),
    },
    "sweep": {
        "kind": (_choice("stirap", "detuning", "dT", "dz"), "stirap"),
        "lambda_start_us": (_float, 0.0),
        "lambda_stop_us": (_float, 3.0),
        "lambda_points": (_int, 21),
        "sigma_start_us": (_float, 0.2),
        "sigma_stop_us": (_float, 1.5),
        "sigma_points": (_int, 21),
        "delta_plus_start_mhz": (_float, -1.0),
        "delta_plus_stop_mhz": (_float, 1.0),
        "delta_plus_points": (_int, 21),
        "delta_minus_start_mhz": (_float, -1.0),
        "delta_minus_stop_mhz": (_float, 1.0),
        "delta_minus_points": (_int, 21),
        "dt_values_k": (_float_list, [0.0, 5.0, 10.0]),
        "dz_values_um": (_float_list, [0.0, 5.0, 10.0]),
        "audit": (_bool, True),
        "cache_dir": (_path, ""),
    },
    "signal": {
        "counts_bright": (_float, 0.05),
        "contrast": (_float, 0.3),
        "shots": (_int, 200_000),
        "synthesize": (_bool, False),
    },
    "run": {
        "frame": (_choice("lab", "rwa"), "rwa"),
        "rtol": (_float, 1e-8),
        "atol": (_float, 1e-10),
        "max_step_us": (_opt_float, None),
        "seed": (_int, 0),
        "jobs": (_int, 1),
        "output": (_path, ""),
    },
    "fit": {
        "data_path": (_path, ""),
        "synthetic_counts": (_float, 1e4),
        "free": (_str_list, list(FIT_PARAMETERS)),
        "omega_minus_bounds_mhz": (_bounds, [1.5, 2.5]),
        "omega_plus_bounds_mhz": (_bounds, [1.5, 2.5]),
        "delta_minus_bounds_mhz": (_bounds, [-0.5, 0.5]),
        "delta_plus_bounds_mhz": (_bounds, [-0.5, 0.5]),
        "gamma_phi_bounds_mhz": (_bounds, [0.0, 0.2]),
        "start_omega_minus_mhz": (_float, 2.0),
        "start_omega_plus_mhz": (_float, 2.0),
        "start_delta_minus_mhz": (_float, 0.0),
        "start_delta_plus_mhz": (_float, 0.0),
        "start_gamma_phi_mhz": (_float, 0.02),
        "restarts": (_int, 3),
        "jitter": (_float, 0.1),
        "rel_tol": (_float, 1e-6),
        "max_evals": (_int, 2000),
    },
}


def _parse(section: str, key: str, value) -> Any:
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]; expected one of {', '.join(SCHEMA)}")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {section}.{key}")
    parser, _ = SCHEMA[section][key]
    try:
        return parser(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: {exc} (got {value!r})") from None


def _ini_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, list):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved configuration: every schema key has a typed value."""

    values: Mapping[str, Mapping[str, Any]]

    def __getitem__(self, section: str) -> Mapping[str, Any]:
        return self.values[section]

    # --- construction ---

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls({s: {k: _copy(d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def from_mapping(cls, data: Mapping[str, Mapping[str, Any]], *, env: Optional[Mapping[str, str]] = None):
        values = cls.defaults().to_dict()
        for section, keys in data.items():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]; expected one of {', '.join(SCHEMA)}")
            if not isinstance(keys, Mapping):
                raise ConfigError(f"section [{section}] must be a table of keys")
            for key, v in keys.items():
                values[section][key] = _parse(section, key, v)
        _apply_env(values, os.environ if env is None else env)
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def from_ini_text(cls, text: str, *, env: Optional[Mapping[str, str]] = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        cp.optionxform = str  # keep key case so typos are not silently folded
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls.from_mapping({s: dict(cp.items(s)) for s in cp.sections()}, env=env)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]], *, env: Optional[Mapping[str, str]] = None):
        """Read an INI file, or a JSON run manifest (its ``config`` table)."""
        if path is None:
            return cls.from_mapping({}, env=env)
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if path.suffix == ".json":
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"malformed JSON config {path}: {exc}") from None
            return cls.from_mapping(data.get("config", data), env=env)
        return cls.from_ini_text(text, env=env)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ExperimentConfig":
        """Return a copy with ``{"section.key": value}`` overrides applied."""
        values = self.to_dict()
        for dotted, v in overrides.items():
            section, key = dotted.split(".", 1)
            values[section][key] = _parse(section, key, v)
        cfg = ExperimentConfig(values)
        cfg.validate()
        return cfg

    # --- serialization ---

    def to_dict(self) -> dict:
        return {s: {k: _copy(v) for k, v in keys.items()} for s, keys in self.values.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_ini(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {_ini_value(v)}" for k, v in keys.items()]
            lines.append("")
        return "\n".join(lines)

    # --- validation and builders ---

    def validate(self) -> None:
        checks = [
            (self.values["sequence"]["tau_points"] >= 1, "sequence.tau_points must be >= 1"),
            (self.values["sequence"]["tau_stop_us"] > self.values["sequence"]["tau_start_us"] >= 0,
             "sequence.tau_stop_us must exceed tau_start_us >= 0"),
            (self.values["run"]["jobs"] >= 1, "run.jobs must be >= 1"),
            (self.values["run"]["rtol"] > 0 and self.values["run"]["atol"] > 0, "run.rtol and run.atol must be > 0"),
            (self.values["drive"]["sample_rate_gsps"] > 0, "drive.sample_rate_gsps must be > 0"),
            (all(n in FIT_PARAMETERS for n in self.values["fit"]["free"]),
             f"fit.free entries must be among {', '.join(FIT_PARAMETERS)}"),
            (len(self.values["fit"]["free"]) >= 1, "fit.free needs at least one parameter"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for section, key in (("sweep", "lambda_points"), ("sweep", "sigma_points"),
                             ("sweep", "delta_plus_points"), ("sweep", "delta_minus_points")):
            if self.values[section][key] < 1:
                raise ConfigError(f"{section}.{key} must be >= 1")
        try:
            self.protocol()
            self.signal_model()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def nv_params(self) -> NVParams:
        s = self.values["nv"]
        return NVParams(D=s["d_mhz"], gamma_e=s["gamma_e_mhz_per_gauss"], gamma_n=s["gamma_n_mhz_per_gauss"],
                        A=s["a_mhz"], B_z=s["b_z_gauss"], dD_dT=s["dd_dt_mhz_per_k"], dBz_dz=s["dbz_dz_gauss_per_um"])

    def environment(self) -> EnvironmentShift:
        s = self.values["environment"]
        return EnvironmentShift(dT=s["dt_k"], dz=s["dz_um"])

    def protocol(self) -> Protocol:
        d, q, dec = self.values["drive"], self.values["sequence"], self.values["decoherence"]
        return Protocol(
            scheme=d["scheme"], raman_detuning=d["raman_detuning_mhz"],
            detuning_minus=d["detuning_minus_mhz"], detuning_plus=d["detuning_plus_mhz"],
            omega_minus=d["omega_minus_mhz"], omega_plus=d["omega_plus_mhz"],
            sigma=d["sigma_us"], separation=d["separation_us"], tau=d["tau_us"],
            phase_minus=d["phase_minus_rad"], phase_plus=d["phase_plus_rad"],
            gamma_phi=dec["gamma_phi_mhz"], gamma_1=dec["gamma_1_mhz"],
            init=q["init"], prepare=q["prepare"], readout_pi=q["readout_pi"], pi_rabi=q["pi_rabi_mhz"],
            nuclear=q["nuclear"], frame=self.values["run"]["frame"],
            field_conversion_minus=d["field_conversion_minus_gauss_per_mhz"],
            field_conversion_plus=d["field_conversion_plus_gauss_per_mhz"],
            nv=self.nv_params(), env=self.environment(),
        )

    def integrator(self) -> IntegratorConfig:
        r = self.values["run"]
        return IntegratorConfig(rtol=r["rtol"], atol=r["atol"], max_step=r["max_step_us"])

    def signal_model(self) -> SignalModel:
        s = self.values["signal"]
        return SignalModel(counts_bright=s["counts_bright"], contrast=s["contrast"], shots=s["shots"],
                           seed=self.values["run"]["seed"])

    def tau_grid(self) -> np.ndarray:
        q = self.values["sequence"]
        return np.linspace(q["tau_start_us"], q["tau_stop_us"], q["tau_points"])

    def sweep_spec(self) -> SweepSpec:
        s = self.values["sweep"]

        def grid(name):
            return tuple(np.linspace(s[f"{name}_start_{_unit(name)}"], s[f"{name}_stop_{_unit(name)}"],
                                     s[f"{name}_points"]).tolist())

        kind = s["kind"]
        if kind == "stirap":
            k = StirapMap(grid("lambda"), grid("sigma"))
        elif kind == "detuning":
            k = DetuningMap(grid("delta_plus"), grid("delta_minus"))
        else:
            values = s["dt_values_k"] if kind == "dT" else s["dz_values_um"]
            k = FluctuationCurve(kind, tuple(values), tuple(self.tau_grid().tolist()))
        try:
            return SweepSpec(k, self.protocol(), audit=s["audit"], seed=self.values["run"]["seed"],
                             config=self.integrator())
        except ValueError as exc:
            raise ConfigError(f"sweep: {exc}") from None

    def fit_config(self) -> FitConfig:
        f = self.values["fit"]
        return FitConfig(restarts=f["restarts"], jitter=f["jitter"], rel_tol=f["rel_tol"],
                         max_evals=f["max_evals"], seed=self.values["run"]["seed"])

    def fit_bounds(self) -> dict[str, tuple[float, float]]:
        f = self.values["fit"]
        return {n: tuple(f[f"{n}_bounds_mhz"]) for n in f["free"]}

    def fit_start(self) -> dict[str, float]:
        f = self.values["fit"]
        return {n: f[f"start_{n}_mhz"] for n in f["free"]}


def _unit(name: str) -> str:
    return "us" if name in ("lambda", "sigma") else "mhz"


def _copy(v):
    return list(v) if isinstance(v, list) else v


def _apply_env(values: dict, env: Mapping[str, str]) -> None:
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX) or "__" not in name[len(ENV_PREFIX):]:
            continue
        section, key = name[len(ENV_PREFIX):].split("__", 1)
        section, key = section.lower(), key.lower()
        values[section][key] = _parse(section, key, raw)
