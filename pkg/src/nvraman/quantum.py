"""Small fixed-dimension operator algebra for the NV electron (spin-1) and
the 15N nucleus (spin-1/2).

Operators and density matrices are plain complex ``numpy`` arrays. The basis
ordering is fixed:

* 3-dim (electron only): ``|-1>, |0>, |+1>``
* 6-dim (electron x nucleus): m_S in (-1, 0, +1) outer, m_I in (+1/2, -1/2)
  inner, i.e. ``|-1,+1/2>, |-1,-1/2>, |0,+1/2>, |0,-1/2>, |+1,+1/2>, |+1,-1/2>``

Other modules address states through :class:`BasisLabel` and
:func:`index_of`, never through raw indices.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

M_S_VALUES = (-1, 0, 1)
M_I_VALUES = (0.5, -0.5)

TRACE_TOL = 1e-6


class BasisLabel(NamedTuple):
    m_s: int
    m_i: Optional[float] = None


def basis_labels(dim: int) -> list[BasisLabel]:
    if dim == 3:
        return [BasisLabel(m) for m in M_S_VALUES]
    if dim == 6:
        return [BasisLabel(m, mi) for m in M_S_VALUES for mi in M_I_VALUES]
    raise ValueError(f"unsupported dimension {dim}; only 3 and 6 are allowed")


def index_of(label: BasisLabel, dim: int) -> int:
    """Position of ``label`` in the fixed basis of dimension ``dim``."""
    if label.m_s not in M_S_VALUES:
        raise ValueError(f"invalid m_S {label.m_s}")
    i_s = M_S_VALUES.index(label.m_s)
    if dim == 3:
        if label.m_i is not None:
            raise ValueError("3-dim basis has no nuclear label")
        return i_s
    if dim == 6:
        if label.m_i not in M_I_VALUES:
            raise ValueError(f"invalid m_I {label.m_i}")
        return 2 * i_s + M_I_VALUES.index(label.m_i)
    raise ValueError(f"unsupported dimension {dim}")


def spin1_operators() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spin-1 matrices (S_x, S_y, S_z) in the basis |-1>, |0>, |+1>."""
    s = 1.0 / np.sqrt(2.0)
    # raising operator divided by 2: |-1> -> |0> -> |+1>
    half_plus = np.array([[0, 0, 0], [s, 0, 0], [0, s, 0]], dtype=complex)
    sx = half_plus + half_plus.conj().T
    sy = -1j * (half_plus - half_plus.conj().T)
    sz = np.diag([-1.0, 0.0, 1.0]).astype(complex)
    return sx, sy, sz


def spin_half_operators() -> tuple[np.ndarray, np.ndarray]:
    """Spin-1/2 matrices (I_x, I_z) in the basis |+1/2>, |-1/2>."""
    ix = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
    iz = np.diag([0.5, -0.5]).astype(complex)
    return ix, iz


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(a, b)


def basis_state(label: BasisLabel, dim: int) -> np.ndarray:
    psi = np.zeros(dim, dtype=complex)
    psi[index_of(label, dim)] = 1.0
    return psi


def projector(label: BasisLabel, dim: int) -> np.ndarray:
    psi = basis_state(label, dim)
    return np.outer(psi, psi.conj())


def electron_projector(m_s: int, dim: int) -> np.ndarray:
    """Projector onto all basis states with electron projection ``m_s``."""
    p = np.zeros((dim, dim), dtype=complex)
    for lab in basis_labels(dim):
        if lab.m_s == m_s:
            i = index_of(lab, dim)
            p[i, i] = 1.0
    return p


def is_hermitian(op: np.ndarray, rel_tol: float = 1e-12) -> bool:
    scale = max(np.max(np.abs(op)), 1.0)
    return bool(np.max(np.abs(op - op.conj().T)) < rel_tol * scale)


def check_density(rho: np.ndarray, trace_tol: float = TRACE_TOL) -> None:
    """Raise ``ValueError`` unless ``rho`` is a normalized density matrix."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] not in (3, 6):
        raise ValueError(f"density matrix must be 3x3 or 6x6, got shape {rho.shape}")
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"density matrix not normalized: trace = {tr:.3g}")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-8:
        raise ValueError("density matrix is not Hermitian")


def populations(rho: np.ndarray) -> dict[BasisLabel, float]:
    """Diagonal populations keyed by basis label.

    In 6-dim mode the dict also carries electron marginals under labels with
    ``m_i=None``, so ``pops[BasisLabel(-1)]`` is the m_S = -1 population in
    either dimension.
    """
    check_density(rho)
    dim = rho.shape[0]
    diag = np.real(np.diag(rho))
    out = {lab: float(diag[index_of(lab, dim)]) for lab in basis_labels(dim)}
    if dim == 6:
        for m in M_S_VALUES:
            out[BasisLabel(m)] = out[BasisLabel(m, 0.5)] + out[BasisLabel(m, -0.5)]
    return out


def electron_populations(rho: np.ndarray) -> np.ndarray:
    """(P(-1), P(0), P(+1)) without validation; accepts stacked states (..., d, d)."""
    diag = np.real(np.diagonal(rho, axis1=-2, axis2=-1))
    if diag.shape[-1] == 6:
        diag = diag.reshape(diag.shape[:-1] + (3, 2)).sum(axis=-1)
    return diag


def density_from_label(label: BasisLabel, dim: int) -> np.ndarray:
    return projector(label, dim)


def electron_state(m_s: int, dim: int, m_i: Optional[float] = 0.5) -> np.ndarray:
    """Density matrix for electron state ``m_s``.

    For dim 6, ``m_i=None`` gives the equal nuclear mixture.
    """
    if dim == 3:
        return projector(BasisLabel(m_s), 3)
    if m_i is None:
        return 0.5 * (projector(BasisLabel(m_s, 0.5), 6) + projector(BasisLabel(m_s, -0.5), 6))
    return projector(BasisLabel(m_s, m_i), 6)
