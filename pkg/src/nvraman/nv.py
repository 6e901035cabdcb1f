"""Static ground-state Hamiltonian of the 15NV center.

All parameters are ordinary frequencies (MHz) and fields (Gauss); the factor
2*pi is applied once, when a Hamiltonian matrix is built, so Hamiltonians are
in rad/us and times are in us.

Reference field values: B_z = 381 G is the working point of the Raman
experiments, B_z ~ 514 G is the excited-state level anticrossing (ESLAC)
used for nuclear polarization.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .quantum import BasisLabel, M_I_VALUES, basis_labels, index_of, spin1_operators, spin_half_operators, tensor

TWO_PI = 2.0 * math.pi

ESLAC_FIELD_GAUSS = 514.0


@dataclass(frozen=True)
class NVParams:
    D: float = 2870.0            # zero-field splitting, MHz
    gamma_e: float = 2.8025      # MHz/G (28.0 GHz/T)
    gamma_n: float = 4.32e-4     # MHz/G (4.32 MHz/T)
    A: float = 3.03              # 15N hyperfine, MHz
    B_z: float = 381.0           # G
    dD_dT: float = 0.1           # MHz/K, positive: warming raises both transitions
    dBz_dz: float = 0.1          # G/um

    def __post_init__(self):
        for name in ("D", "gamma_e"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"NVParams.{name} must be finite and > 0, got {v}")
        # couplings and drift slopes may be switched off
        for name in ("gamma_n", "A", "B_z", "dD_dT", "dBz_dz"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"NVParams.{name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EnvironmentShift:
    dT: float = 0.0   # K
    dz: float = 0.0   # um

    def __post_init__(self):
        if not (math.isfinite(self.dT) and math.isfinite(self.dz)):
            raise ValueError("EnvironmentShift values must be finite")


@dataclass(frozen=True)
class TransitionSet:
    """|0> <-> |-1> and |0> <-> |+1> frequencies (MHz) for one m_I."""

    omega_minus: float
    omega_plus: float
    m_i: float = 0.5

    def frequency(self, which: str) -> float:
        if which == "minus":
            return self.omega_minus
        if which == "plus":
            return self.omega_plus
        raise ValueError(f"unknown transition {which!r}")


def _effective(p: NVParams, env: EnvironmentShift) -> tuple[float, float]:
    return p.D + p.dD_dT * env.dT, p.B_z + p.dBz_dz * env.dz


def level_energies(p: NVParams, env: EnvironmentShift = EnvironmentShift()) -> dict[BasisLabel, float]:
    """Closed-form level energies E(m_S, m_I) in MHz (no 2*pi)."""
    d, b = _effective(p, env)
    return {
        BasisLabel(ms, mi): d * ms**2 + p.gamma_e * b * ms + p.gamma_n * b * mi + p.A * ms * mi
        for ms in (-1, 0, 1)
        for mi in M_I_VALUES
    }


def build_static_hamiltonian(p: NVParams, env: EnvironmentShift = EnvironmentShift()) -> np.ndarray:
    """6x6 ground-state Hamiltonian in rad/us, diagonal in the product basis."""
    d, b = _effective(p, env)
    _, _, sz = spin1_operators()
    _, iz = spin_half_operators()
    id2, id3 = np.eye(2), np.eye(3)
    h = (
        d * tensor(sz @ sz, id2)
        + p.gamma_e * b * tensor(sz, id2)
        + p.gamma_n * b * tensor(id3, iz)
        + p.A * tensor(sz, iz)
    )
    return TWO_PI * h


def electron_only_hamiltonian(p: NVParams, env: EnvironmentShift = EnvironmentShift(), m_i: float = 0.5) -> np.ndarray:
    """3x3 restriction to fixed ``m_i`` with the hyperfine term folded in.

    The constant nuclear Zeeman offset of the block is dropped; it does not
    change any transition frequency.
    """
    if m_i not in M_I_VALUES:
        raise ValueError(f"m_i must be +1/2 or -1/2, got {m_i}")
    d, b = _effective(p, env)
    _, _, sz = spin1_operators()
    h = d * sz @ sz + (p.gamma_e * b + p.A * m_i) * sz
    return TWO_PI * h


def transition_frequencies(p: NVParams, env: EnvironmentShift = EnvironmentShift(), m_i: float = 0.5) -> TransitionSet:
    """Read omega_-/omega_+ (MHz) off the diagonal of the static Hamiltonian."""
    if m_i not in M_I_VALUES:
        raise ValueError(f"m_i must be +1/2 or -1/2, got {m_i}")
    e = np.real(np.diag(build_static_hamiltonian(p, env))) / TWO_PI
    e0 = e[index_of(BasisLabel(0, m_i), 6)]
    return TransitionSet(
        omega_minus=float(e[index_of(BasisLabel(-1, m_i), 6)] - e0),
        omega_plus=float(e[index_of(BasisLabel(1, m_i), 6)] - e0),
        m_i=m_i,
    )


def level_table(p: NVParams, env: EnvironmentShift = EnvironmentShift()) -> list[tuple[BasisLabel, float]]:
    e = np.real(np.diag(build_static_hamiltonian(p, env))) / TWO_PI
    return [(lab, float(e[index_of(lab, 6)])) for lab in basis_labels(6)]
