"""Pulse protocol: laser initialization, pi_- preparation, Raman block of
length tau, state-selective readout.

Readout branches: the |0> population is read directly, or after a pi pulse
on the |0>-|-1> (|0>-|+1>) transition, which reports P(-1) (P(+1)). Each
branch is a separate run, but they share everything up to the readout, so
one propagation serves all three.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .drive import DEFAULT_PI_RABI, DriveSpec, clip, pi_pulse, seed_field_conversion, srt_drive, stirap_drive, stirap_length
from .nv import EnvironmentShift, NVParams, transition_frequencies
from .propagator import Dephasing, IntegratorConfig, Relaxation, evolve
from .quantum import BasisLabel, electron_populations, index_of, basis_labels

READOUT_MODES = ("pi_minus_then_p0", "direct_p0", "pi_plus_then_p0")
_READOUT_TARGET = {"pi_minus_then_p0": "minus", "pi_plus_then_p0": "plus"}


@dataclass(frozen=True)
class Polarized:
    m_i: float = 0.5


@dataclass(frozen=True)
class Unpolarized:
    pass


NuclearInit = Union[Polarized, Unpolarized]


@dataclass(frozen=True)
class SequenceSpec:
    raman: DriveSpec
    tau: float
    init: str = "ideal"            # ideal | none
    prepare: str = "ideal"         # ideal | physical | none
    readout: tuple[str, ...] = READOUT_MODES
    readout_pi: str = "ideal"      # ideal | physical
    pi_rabi: float = DEFAULT_PI_RABI
    drive_m_i: float = 0.5         # nuclear line the pi pulses are tuned to

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("Raman block length tau must be >= 0")
        if self.init not in ("ideal", "none"):
            raise ValueError(f"init must be 'ideal' or 'none', got {self.init!r}")
        if self.prepare not in ("ideal", "physical", "none"):
            raise ValueError(f"prepare must be ideal|physical|none, got {self.prepare!r}")
        if self.readout_pi not in ("ideal", "physical"):
            raise ValueError(f"readout_pi must be ideal|physical, got {self.readout_pi!r}")
        bad = [m for m in self.readout if m not in READOUT_MODES]
        if bad or not self.readout or len(set(self.readout)) != len(self.readout):
            raise ValueError(f"invalid readout modes {self.readout!r}")


def _swap(rho: np.ndarray, m_s: int) -> np.ndarray:
    """Ideal pi pulse: exchange |0> and |m_s> for every nuclear projection."""
    dim = rho.shape[0]
    perm = np.arange(dim)
    for lab in basis_labels(dim):
        if lab.m_s == 0:
            i0 = index_of(lab, dim)
            im = index_of(BasisLabel(m_s, lab.m_i), dim)
            perm[i0], perm[im] = im, i0
    return rho[np.ix_(perm, perm)]


def _initial_state(spec: SequenceSpec, dim: int, m_i: Optional[float], rho0) -> np.ndarray:
    if spec.init == "none":
        if rho0 is None:
            raise ValueError("init='none' requires an explicit rho0")
        return np.asarray(rho0, dtype=complex)
    rho = np.zeros((dim, dim), dtype=complex)
    if dim == 3:
        rho[1, 1] = 1.0
    elif m_i is None:
        for mi in (0.5, -0.5):
            i = index_of(BasisLabel(0, mi), 6)
            rho[i, i] = 0.5
    else:
        i = index_of(BasisLabel(0, m_i), 6)
        rho[i, i] = 1.0
    return rho


class _Runner:
    """Propagates one nuclear configuration through the protocol."""

    def __init__(self, spec, p, env, channels, frame, m_i, config):
        self.spec, self.p, self.env = spec, p, env
        self.channels, self.frame, self.config = tuple(channels), frame, config
        self.m_i = m_i if m_i is not None else 0.5
        # pulses are set up at nominal conditions; drift acts only on the spin
        self.pulse_ts = transition_frequencies(p, EnvironmentShift(), spec.drive_m_i)

    def evolve(self, drive: DriveSpec, rho: np.ndarray, t_grid=None):
        return evolve(self.frame, self.p, self.env, drive, rho, self.channels, t_grid,
                      m_i=self.m_i, config=self.config)

    def pi(self, which: str, rho: np.ndarray) -> np.ndarray:
        d = pi_pulse(self.pulse_ts, which, self.spec.pi_rabi, field_conversion=self.spec.raman.field_conversion)
        return self.evolve(d, rho).final_state

    def prepared(self, rho: np.ndarray) -> np.ndarray:
        if self.spec.prepare == "ideal":
            return _swap(rho, -1)
        if self.spec.prepare == "physical":
            return self.pi("minus", rho)
        return rho

    def readout(self, rho: np.ndarray) -> np.ndarray:
        out = np.full(3, np.nan)
        for mode in self.spec.readout:
            col = READOUT_MODES.index(mode)
            if mode == "direct_p0":
                r = rho
            elif self.spec.readout_pi == "ideal":
                r = _swap(rho, -1 if _READOUT_TARGET[mode] == "minus" else 1)
            else:
                r = self.pi(_READOUT_TARGET[mode], rho)
            out[col] = electron_populations(r)[1]
        return out


def _configs(nuclear: NuclearInit, frame: str) -> list[tuple[int, Optional[float], float]]:
    """(dim, nuclear projection, weight) for each run to average."""
    dim = 6 if frame == "lab" else 3
    if isinstance(nuclear, Polarized):
        return [(dim, nuclear.m_i, 1.0)]
    return [(dim, 0.5, 0.5), (dim, -0.5, 0.5)]


def run_sequence(
    spec: SequenceSpec,
    nuclear: NuclearInit,
    p: NVParams,
    env: EnvironmentShift,
    channels: Sequence = (),
    frame: str = "rwa",
    *,
    config: IntegratorConfig = IntegratorConfig(),
    rho0: Optional[np.ndarray] = None,
) -> tuple[float, float, float]:
    """Measured (P_-1, P_0, P_+1) at readout.

    Readout branches not listed in ``spec.readout`` come back as NaN. With
    ideal pi pulses the three branches are the true electron populations.
    """
    total = np.zeros(3)
    for dim, m_i, w in _configs(nuclear, frame):
        runner = _Runner(spec, p, env, channels, frame, m_i, config)
        rho = runner.prepared(_initial_state(spec, dim, m_i, rho0))
        if spec.tau > 0:
            rho = runner.evolve(clip(spec.raman, spec.tau), rho, [spec.tau]).final_state
        total = total + w * runner.readout(rho)
    return tuple(float(v) for v in total)


def unpolarized_run(
    spec: SequenceSpec,
    p: NVParams,
    env: EnvironmentShift,
    channels: Sequence = (),
    frame: str = "rwa",
    *,
    method: str = "average",
    config: IntegratorConfig = IntegratorConfig(),
) -> tuple[float, float, float]:
    """Readout for an unpolarized 15N spin.

    ``average`` runs both nuclear projections and averages them; ``mixture``
    propagates the 6-dim equal mixture once. By linearity they agree.
    """
    if method == "average":
        return run_sequence(spec, Unpolarized(), p, env, channels, frame, config=config)
    if method != "mixture":
        raise ValueError(f"unknown method {method!r}")
    runner = _Runner(spec, p, env, channels, frame, 0.5, config)
    rho = runner.prepared(_initial_state(spec, 6, None, None))
    if spec.tau > 0:
        rho = runner.evolve(clip(spec.raman, spec.tau), rho, [spec.tau]).final_state
    return tuple(float(v) for v in runner.readout(rho))


@dataclass
class ScanResult:
    tau: np.ndarray
    populations: np.ndarray          # (n_tau, 3) measured P_-1, P_0, P_+1
    counts: Optional[np.ndarray] = None

    def to_csv(self, path: Union[str, Path]) -> None:
        header = ["tau_us", "P_m1", "P_0", "P_p1"]
        if self.counts is not None:
            header += ["counts_m1", "counts_0", "counts_p1"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, t in enumerate(self.tau):
                row = [repr(float(t))] + [repr(float(v)) for v in self.populations[i]]
                if self.counts is not None:
                    row += [str(int(c)) for c in self.counts[i]]
                w.writerow(row)


def dynamics_scan(
    spec: SequenceSpec,
    tau_grid,
    nuclear: NuclearInit,
    p: NVParams,
    env: EnvironmentShift,
    channels: Sequence = (),
    frame: str = "rwa",
    *,
    method: str = "auto",
    config: IntegratorConfig = IntegratorConfig(),
) -> ScanResult:
    """Readout as a function of the Raman block length.

    ``clip`` reruns the protocol with the drive clipped at every tau.
    ``trajectory`` samples a single propagation, which is equivalent when
    the readout pi pulses are ideal (readout is then instantaneous). ``auto``
    chooses ``trajectory`` whenever that holds.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.ndim != 1 or tau_grid.size == 0 or np.any(np.diff(tau_grid) <= 0) or tau_grid[0] < 0:
        raise ValueError("tau grid must be non-empty, non-negative and strictly increasing")
    if method == "auto":
        method = "trajectory" if spec.readout_pi == "ideal" else "clip"
    if method == "clip":
        pops = np.array([run_sequence(replace(spec, tau=float(t)), nuclear, p, env, channels, frame, config=config)
                         for t in tau_grid])
        return ScanResult(tau_grid, pops)
    if method != "trajectory":
        raise ValueError(f"unknown scan method {method!r}")
    if spec.readout_pi != "ideal":
        raise ValueError("trajectory scans need ideal readout pi pulses")
    total = np.zeros((tau_grid.size, 3))
    for dim, m_i, w in _configs(nuclear, frame):
        runner = _Runner(spec, p, env, channels, frame, m_i, config)
        rho = runner.prepared(_initial_state(spec, dim, m_i, None))
        drive = clip(spec.raman, float(tau_grid[-1]))
        traj = runner.evolve(drive, rho, tau_grid)
        pops = traj.populations
        sel = np.full(3, np.nan)
        for mode in spec.readout:
            sel[READOUT_MODES.index(mode)] = 1.0
        total = total + w * pops * sel
    return ScanResult(tau_grid, total)


# --- photon-count readout model ---------------------------------------------


@dataclass(frozen=True)
class SignalModel:
    """Mean photon counts: shots * counts_bright * (P0 + (1 - P0)(1 - contrast))."""

    counts_bright: float = 0.05
    contrast: float = 0.3
    shots: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.contrast < 1:
            raise ValueError("contrast must lie in (0, 1)")
        if self.counts_bright <= 0 or self.shots <= 0:
            raise ValueError("counts_bright and shots must be > 0")

    @property
    def bright_total(self) -> float:
        return self.shots * self.counts_bright

    def mean_counts(self, p0):
        p0 = np.asarray(p0, dtype=float)
        return self.bright_total * (p0 + (1.0 - p0) * (1.0 - self.contrast))

    def normalize(self, counts):
        """Invert the mean-count map: counts -> estimated P0."""
        counts = np.asarray(counts, dtype=float)
        return (counts / self.bright_total - (1.0 - self.contrast)) / self.contrast

    def sigma(self, counts):
        """Poisson standard error of :meth:`normalize`."""
        counts = np.asarray(counts, dtype=float)
        return np.sqrt(np.maximum(counts, 1.0)) / (self.bright_total * self.contrast)


def synthesize_counts(populations, sm: SignalModel) -> np.ndarray:
    """Poisson photon counts for each readout branch (seeded, reproducible)."""
    rng = np.random.default_rng(sm.seed)
    mean = sm.mean_counts(np.clip(np.asarray(populations, dtype=float), 0.0, 1.0))
    return rng.poisson(mean)


# --- high-level protocol description ----------------------------------------


NUCLEAR_MODES = ("polarized_plus", "polarized_minus", "unpolarized")


@dataclass(frozen=True)
class Protocol:
    """Everything needed to simulate one SRT or STIRAP measurement.

    Frequencies in MHz, times in us. ``tau`` is the Raman block length;
    ``None`` means the natural length (one SRT inversion half-period, or the
    full STIRAP sequence).
    """

    scheme: str = "srt"
    raman_detuning: float = 5.0
    detuning_minus: float = 0.0
    detuning_plus: float = 0.0
    omega_minus: float = 2.0
    omega_plus: float = 2.0
    sigma: float = 0.85
    separation: float = 1.2
    tau: Optional[float] = None
    phase_minus: float = 0.0
    phase_plus: float = 0.0
    gamma_phi: float = 0.0
    gamma_1: float = 0.0
    init: str = "ideal"
    prepare: str = "ideal"
    readout_pi: str = "ideal"
    pi_rabi: float = DEFAULT_PI_RABI
    nuclear: str = "polarized_plus"
    frame: str = "rwa"
    field_conversion_minus: Optional[float] = None   # G per MHz; None -> analytic
    field_conversion_plus: Optional[float] = None
    nv: NVParams = field(default_factory=NVParams)
    env: EnvironmentShift = field(default_factory=EnvironmentShift)

    def __post_init__(self):
        if self.scheme not in ("srt", "stirap"):
            raise ValueError(f"scheme must be 'srt' or 'stirap', got {self.scheme!r}")
        if self.nuclear not in NUCLEAR_MODES:
            raise ValueError(f"nuclear must be one of {NUCLEAR_MODES}")
        if self.frame not in ("lab", "rwa"):
            raise ValueError("frame must be 'lab' or 'rwa'")

    @property
    def drive_m_i(self) -> float:
        return -0.5 if self.nuclear == "polarized_minus" else 0.5

    @property
    def nuclear_init(self) -> NuclearInit:
        if self.nuclear == "unpolarized":
            return Unpolarized()
        return Polarized(self.drive_m_i)

    @property
    def channels(self) -> tuple:
        out = []
        if self.gamma_phi > 0:
            out.append(Dephasing(self.gamma_phi))
        if self.gamma_1 > 0:
            out.append(Relaxation(self.gamma_1))
        return tuple(out)

    @property
    def srt_frequency(self) -> float:
        """Large-detuning effective inversion frequency Omega_+ Omega_- / (2|Delta|)."""
        return srt_effective_frequency(self.omega_minus, self.omega_plus, self.raman_detuning)

    @property
    def raman_length(self) -> float:
        if self.tau is not None:
            return self.tau
        if self.scheme == "stirap":
            return stirap_length(self.sigma, self.separation)
        if self.raman_detuning == 0:
            return 1.0 / math.hypot(self.omega_minus, self.omega_plus)
        return 1.0 / (2.0 * self.srt_frequency)

    def field_conversion(self) -> dict[str, float]:
        fc = seed_field_conversion(self.nv.gamma_e)
        if self.field_conversion_minus is not None:
            fc["minus"] = self.field_conversion_minus
        if self.field_conversion_plus is not None:
            fc["plus"] = self.field_conversion_plus
        return fc

    def drive(self, length: Optional[float] = None) -> DriveSpec:
        """Raman drive with carriers set from the nominal (undrifted) transitions."""
        ts = transition_frequencies(self.nv, EnvironmentShift(), self.drive_m_i)
        kw = dict(phase_minus=self.phase_minus, phase_plus=self.phase_plus, field_conversion=self.field_conversion())
        if self.scheme == "stirap":
            return stirap_drive(ts, self.detuning_minus, self.detuning_plus, self.omega_minus, self.omega_plus,
                                self.sigma, self.separation, **kw)
        length = self.raman_length if length is None else length
        return srt_drive(ts, self.raman_detuning, self.detuning_minus, self.detuning_plus,
                         self.omega_minus, self.omega_plus, max(length, 1e-12), **kw)

    def sequence(self, tau: Optional[float] = None, length: Optional[float] = None) -> SequenceSpec:
        tau = self.raman_length if tau is None else tau
        return SequenceSpec(self.drive(length if length is not None else max(tau, self.raman_length)), tau,
                            init=self.init, prepare=self.prepare, readout_pi=self.readout_pi,
                            pi_rabi=self.pi_rabi, drive_m_i=self.drive_m_i)

    def run(self, config: IntegratorConfig = IntegratorConfig()) -> tuple[float, float, float]:
        return run_sequence(self.sequence(), self.nuclear_init, self.nv, self.env, self.channels, self.frame,
                            config=config)

    def scan(self, tau_grid, *, method: str = "auto", config: IntegratorConfig = IntegratorConfig()) -> ScanResult:
        tau_grid = np.asarray(tau_grid, dtype=float)
        spec = self.sequence(tau=float(tau_grid[-1]), length=float(tau_grid[-1]))
        return dynamics_scan(spec, tau_grid, self.nuclear_init, self.nv, self.env, self.channels, self.frame,
                             method=method, config=config)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Protocol":
        d = dict(d)
        nv = NVParams(**d.pop("nv", {}))
        env = EnvironmentShift(**d.pop("env", {}))
        return cls(nv=nv, env=env, **d)


def srt_effective_frequency(omega_minus: float, omega_plus: float, delta: float) -> float:
    if delta == 0:
        raise ValueError("effective SRT frequency is undefined at zero detuning")
    return omega_minus * omega_plus / (2.0 * abs(delta))
