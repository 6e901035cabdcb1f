"""Microwave drive synthesis.

A drive is a sum of tones, each ``B_x * f_env(t) * sin(2*pi*carrier*t + phase)``
with B_x in Gauss. Tones are specified by the resonant Rabi frequency they
would produce on their target transition; a per-transition conversion factor
(MHz of Rabi frequency -> Gauss) turns that into a field amplitude.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .nv import NVParams, TransitionSet

TARGETS = ("minus", "plus")

# half-width of the Gaussian window in units of sigma (total window 8 sigma)
GAUSS_HALF_WIDTH_SIGMAS = 4.0

DEFAULT_PI_RABI = 0.5  # MHz -> 1 us pi pulse


def seed_field_conversion(gamma_e: float = NVParams.gamma_e) -> dict[str, float]:
    """Analytic Rabi->field factor sqrt(2)/gamma_e (G per MHz) for both transitions.

    The spin-1 matrix element 1/sqrt(2) and the rotating-wave factor 1/2 give
    Omega = gamma_e * B_x / sqrt(2).
    """
    f = math.sqrt(2.0) / gamma_e
    return {"minus": f, "plus": f}


@dataclass(frozen=True)
class Rect:
    t_on: float
    t_off: float

    def __post_init__(self):
        if self.t_off < self.t_on:
            raise ValueError(f"Rect envelope ends before it starts ({self.t_on}, {self.t_off})")

    @property
    def start(self) -> float:
        return self.t_on

    @property
    def end(self) -> float:
        return self.t_off

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.t_on) & (t < self.t_off), 1.0, 0.0)


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float
    half_width: Optional[float] = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"Gaussian sigma must be > 0, got {self.sigma}")
        if self.half_width is None:
            object.__setattr__(self, "half_width", GAUSS_HALF_WIDTH_SIGMAS * self.sigma)

    @property
    def start(self) -> float:
        return self.mu - self.half_width

    @property
    def end(self) -> float:
        return self.mu + self.half_width

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.start) & (t <= self.end)
        return np.where(inside, np.exp(-((t - self.mu) ** 2) / (2.0 * self.sigma**2)), 0.0)


Envelope = Union[Rect, Gaussian]


@dataclass(frozen=True)
class Tone:
    carrier: float              # MHz
    rabi_amplitude: float       # MHz
    envelope: Envelope
    target: str = "minus"
    phase: float = 0.0          # rad

    def __post_init__(self):
        if not self.carrier > 0:
            raise ValueError(f"tone carrier must be > 0 MHz, got {self.carrier}")
        if self.rabi_amplitude < 0:
            raise ValueError("tone rabi_amplitude must be >= 0")
        if self.target not in TARGETS:
            raise ValueError(f"tone target must be one of {TARGETS}")


@dataclass(frozen=True)
class DriveSpec:
    tones: tuple[Tone, ...] = ()
    field_conversion: Mapping[str, float] = field(default_factory=seed_field_conversion)
    clip_time: Optional[float] = None

    def field_amplitude(self, tone: Tone) -> float:
        """Peak field B_x (G) of ``tone``."""
        return tone.rabi_amplitude * self.field_conversion[tone.target]

    @property
    def end_time(self) -> float:
        """Time after which the drive is identically zero."""
        end = max((t.envelope.end for t in self.tones), default=0.0)
        if self.clip_time is not None:
            end = min(end, self.clip_time)
        return max(end, 0.0)

    @property
    def max_carrier(self) -> float:
        return max((t.carrier for t in self.tones), default=0.0)

    def breakpoints(self) -> list[float]:
        """Sorted times where V(t) or its envelope is discontinuous."""
        pts = set()
        for tone in self.tones:
            pts.update((tone.envelope.start, tone.envelope.end))
        if self.clip_time is not None:
            pts = {p for p in pts if p < self.clip_time}
            pts.add(self.clip_time)
        return sorted(pts)

    def with_tones(self, tones) -> "DriveSpec":
        return replace(self, tones=tuple(tones))


def evaluate(d: DriveSpec, t):
    """V(t) in Gauss; accepts a scalar or an array of times (us)."""
    t_arr = np.asarray(t, dtype=float)
    v = np.zeros_like(t_arr)
    for tone in d.tones:
        v = v + d.field_amplitude(tone) * tone.envelope(t_arr) * np.sin(
            2.0 * np.pi * tone.carrier * t_arr + tone.phase
        )
    if d.clip_time is not None:
        v = np.where(t_arr < d.clip_time, v, 0.0)
    return float(v) if np.ndim(t) == 0 else v


def clip(d: DriveSpec, tau: float) -> DriveSpec:
    """Gate the drive off at ``tau`` (instantaneous, no ramp)."""
    if tau < 0:
        raise ValueError("clip time must be >= 0")
    if d.clip_time is not None:
        tau = min(tau, d.clip_time)
    return replace(d, clip_time=float(tau))


def _check_carrier(c: float, name: str) -> float:
    if not c > 0:
        raise ValueError(f"{name} carrier is {c:.6g} MHz; must be > 0")
    return c


def srt_drive(
    ts: TransitionSet,
    Delta: float,
    delta_minus: float,
    delta_plus: float,
    Omega_minus: float,
    Omega_plus: float,
    tau: float,
    *,
    phase_minus: float = 0.0,
    phase_plus: float = 0.0,
    field_conversion: Optional[Mapping[str, float]] = None,
) -> DriveSpec:
    """Two rectangular tones on [0, tau), each red-detuned by Delta + delta."""
    if not tau > 0:
        raise ValueError("SRT pulse length tau must be > 0")
    env = Rect(0.0, float(tau))
    tones = (
        Tone(_check_carrier(ts.omega_minus - Delta - delta_minus, "minus"), Omega_minus, env, "minus", phase_minus),
        Tone(_check_carrier(ts.omega_plus - Delta - delta_plus, "plus"), Omega_plus, env, "plus", phase_plus),
    )
    return DriveSpec(tones, dict(field_conversion or seed_field_conversion()))


def stirap_drive(
    ts: TransitionSet,
    delta_minus: float,
    delta_plus: float,
    Omega_minus: float,
    Omega_plus: float,
    sigma: float,
    Lambda: float,
    *,
    phase_minus: float = 0.0,
    phase_plus: float = 0.0,
    field_conversion: Optional[Mapping[str, float]] = None,
) -> DriveSpec:
    """Counter-intuitive Gaussian pair: the |0>-|+1> pulse peaks first.

    The sequence starts at the leading edge of the first window, so
    mu_plus = 4 sigma, mu_minus = mu_plus + Lambda and the total length is
    Lambda + 8 sigma.
    """
    if not sigma > 0:
        raise ValueError("STIRAP sigma must be > 0")
    if Lambda < 0:
        raise ValueError("STIRAP separation Lambda must be >= 0")
    mu_plus = GAUSS_HALF_WIDTH_SIGMAS * sigma
    mu_minus = mu_plus + Lambda
    tones = (
        Tone(_check_carrier(ts.omega_minus - delta_minus, "minus"), Omega_minus, Gaussian(mu_minus, sigma), "minus", phase_minus),
        Tone(_check_carrier(ts.omega_plus - delta_plus, "plus"), Omega_plus, Gaussian(mu_plus, sigma), "plus", phase_plus),
    )
    return DriveSpec(tones, dict(field_conversion or seed_field_conversion()))


def stirap_length(sigma: float, Lambda: float) -> float:
    return Lambda + 2.0 * GAUSS_HALF_WIDTH_SIGMAS * sigma


def pi_pulse_duration(Omega: float) -> float:
    return 1.0 / (2.0 * Omega)


def pi_pulse(
    ts: TransitionSet,
    which: str,
    Omega: float = DEFAULT_PI_RABI,
    *,
    t_start: float = 0.0,
    field_conversion: Optional[Mapping[str, float]] = None,
) -> DriveSpec:
    """Resonant rectangular pi pulse of length 1/(2*Omega)."""
    if not Omega > 0:
        raise ValueError("pi pulse Rabi frequency must be > 0")
    env = Rect(t_start, t_start + pi_pulse_duration(Omega))
    tone = Tone(_check_carrier(ts.frequency(which), which), Omega, env, which)
    return DriveSpec((tone,), dict(field_conversion or seed_field_conversion()))


# --- waveform sampling / export -------------------------------------------


@dataclass(frozen=True)
class Waveform:
    t: np.ndarray           # us
    values: np.ndarray      # G
    sample_rate: float      # GSa/s
    t_end: float            # us

    @property
    def n_samples(self) -> int:
        return int(self.values.size)

    def manifest(self) -> dict:
        return {"sample_rate_gsps": self.sample_rate, "n_samples": self.n_samples, "t_end_us": self.t_end,
                "units": {"t": "us", "field": "gauss"}}


class NyquistError(ValueError):
    pass


def n_samples_for(sample_rate: float, t_end: float) -> int:
    # GSa/s * us = 1e3 samples
    return int(round(sample_rate * t_end * 1e3))


def sample_waveform(d: DriveSpec, sample_rate: float, t_end: float) -> Waveform:
    if not sample_rate > 0 or t_end < 0:
        raise ValueError("sample_rate must be > 0 and t_end >= 0")
    nyquist_mhz = sample_rate * 1e3 / 2.0
    for i, tone in enumerate(d.tones):
        if tone.carrier >= nyquist_mhz:
            raise NyquistError(
                f"tone {i} ({tone.target}, {tone.carrier:.6g} MHz) exceeds Nyquist limit "
                f"{nyquist_mhz:.6g} MHz at {sample_rate:g} GSa/s"
            )
    n = n_samples_for(sample_rate, t_end)
    t = np.arange(n) / (sample_rate * 1e3)
    return Waveform(t=t, values=evaluate(d, t), sample_rate=float(sample_rate), t_end=float(t_end))


def write_waveform(w: Waveform, path: Union[str, Path], fmt: str = "csv") -> list[Path]:
    """Write ``w`` as CSV (``t_us,field_gauss``) or raw little-endian f32 + JSON manifest."""
    path = Path(path)
    manifest_path = path.with_name(path.name + ".json")
    if fmt == "csv":
        with open(path, "w") as fh:
            fh.write("t_us,field_gauss\n")
            for ti, vi in zip(w.t, w.values):
                fh.write(f"{ti:.12g},{vi:.12g}\n")
    elif fmt == "f32":
        w.values.astype("<f4").tofile(path)
    else:
        raise ValueError(f"unknown waveform format {fmt!r}")
    manifest_path.write_text(json.dumps({**w.manifest(), "format": fmt}, indent=2, sort_keys=True) + "\n")
    return [path, manifest_path]


def read_f32_waveform(path: Union[str, Path]) -> tuple[np.ndarray, dict]:
    path = Path(path)
    manifest = json.loads(path.with_name(path.name + ".json").read_text())
    values = np.fromfile(path, dtype="<f4")
    if values.size != manifest["n_samples"]:
        raise ValueError("waveform length does not match manifest")
    return values, manifest
