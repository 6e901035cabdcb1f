"""Parameter sweeps over the pulse protocol and robustness metrics."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from . import __version__
from .experiment import Protocol
from .propagator import IntegrationError, IntegratorConfig

log = logging.getLogger(__name__)

AUDIT_TOL = 0.03


@dataclass(frozen=True)
class TauScan:
    tau_grid: tuple[float, ...]


@dataclass(frozen=True)
class StirapMap:
    lambda_grid: tuple[float, ...]   # x axis
    sigma_grid: tuple[float, ...]    # y axis


@dataclass(frozen=True)
class DetuningMap:
    """delta_+ on x, delta_- on y; the base protocol's scheme selects SRT or STIRAP."""

    delta_plus_grid: tuple[float, ...]
    delta_minus_grid: tuple[float, ...]


@dataclass(frozen=True)
class FluctuationCurve:
    """Full tau series per environmental offset (``dT`` in K or ``dz`` in um)."""

    variable: str
    values: tuple[float, ...]
    tau_grid: tuple[float, ...]

    def __post_init__(self):
        if self.variable not in ("dT", "dz"):
            raise ValueError("fluctuation variable must be 'dT' or 'dz'")


SweepKind = Union[TauScan, StirapMap, DetuningMap, FluctuationCurve]


@dataclass(frozen=True)
class SweepSpec:
    kind: SweepKind
    base: Protocol = field(default_factory=Protocol)
    audit: bool = False
    seed: int = 0
    config: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        for name, grid in _grids(self.kind).items():
            arr = np.asarray(grid, dtype=float)
            if arr.size == 0 or not np.all(np.isfinite(arr)):
                raise ValueError(f"sweep grid {name} must be non-empty and finite")

    def to_dict(self) -> dict:
        return {
            "kind": type(self.kind).__name__,
            "grids": {k: list(map(float, v)) for k, v in _grids(self.kind).items()},
            **({"variable": self.kind.variable} if isinstance(self.kind, FluctuationCurve) else {}),
            "base": self.base.to_dict(),
            "audit": self.audit,
            "seed": self.seed,
            "config": asdict(self.config),
        }


def _grids(kind: SweepKind) -> dict:
    return {k: v for k, v in asdict(kind).items() if k != "variable"}


@dataclass
class GridResult:
    x_name: str
    y_name: str
    x: np.ndarray
    y: np.ndarray
    cells: np.ndarray                     # (nx, ny, 3): P_-1, P_0, P_+1
    maxima: Optional[np.ndarray] = None   # (nx, 3) max over the y (tau) axis
    diagnostics: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    complete: bool = True

    @property
    def audit_passed(self) -> Optional[bool]:
        if not self.audit:
            return None
        return all(a["deviation"] <= AUDIT_TOL for a in self.audit)

    def state(self, m_s: int) -> np.ndarray:
        return self.cells[:, :, m_s + 1]

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "P_m1", "P_0", "P_p1"])
            for i, xv in enumerate(self.x):
                for j, yv in enumerate(self.y):
                    w.writerow([repr(float(xv)), repr(float(yv))] + [repr(float(v)) for v in self.cells[i, j]])

    def write(self, path: Union[str, Path]) -> list[Path]:
        """CSV plus ``<path>.json`` manifest."""
        path = Path(path)
        self.to_csv(path)
        man = dict(self.manifest)
        man.update(x_name=self.x_name, y_name=self.y_name, shape=list(self.cells.shape[:2]), complete=self.complete,
                   diagnostics=self.diagnostics, audit=self.audit, audit_passed=self.audit_passed)
        mpath = path.with_name(path.name + ".json")
        mpath.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        return [path, mpath]


# --- cell evaluation ---------------------------------------------------------


def _axes(kind: SweepKind) -> tuple[str, str, np.ndarray, np.ndarray]:
    if isinstance(kind, TauScan):
        return "tau_us", "none", np.asarray(kind.tau_grid, float), np.zeros(1)
    if isinstance(kind, StirapMap):
        return "lambda_us", "sigma_us", np.asarray(kind.lambda_grid, float), np.asarray(kind.sigma_grid, float)
    if isinstance(kind, DetuningMap):
        return ("delta_plus_mhz", "delta_minus_mhz", np.asarray(kind.delta_plus_grid, float),
                np.asarray(kind.delta_minus_grid, float))
    if isinstance(kind, FluctuationCurve):
        name = "dt_k" if kind.variable == "dT" else "dz_um"
        return name, "tau_us", np.asarray(kind.values, float), np.asarray(kind.tau_grid, float)
    raise TypeError(f"unknown sweep kind {kind!r}")


def cell_protocol(spec: SweepSpec, i: int, j: int, frame: Optional[str] = None) -> Protocol:
    """Protocol evaluated at cell (i, j)."""
    kind, base = spec.kind, spec.base
    _, _, x, y = _axes(kind)
    if isinstance(kind, StirapMap):
        pr = replace(base, scheme="stirap", separation=float(x[i]), sigma=float(y[j]), tau=None)
    elif isinstance(kind, DetuningMap):
        pr = replace(base, detuning_plus=float(x[i]), detuning_minus=float(y[j]))
    elif isinstance(kind, FluctuationCurve):
        env = replace(base.env, **{kind.variable: float(x[i])})
        pr = replace(base, env=env)
    else:
        pr = base
    return replace(pr, frame=frame) if frame else pr


def _row_task(args):
    """Evaluate one x-row of the grid; returns (i, values (ny, 3), diagnostics)."""
    spec, i = args
    kind = spec.kind
    _, _, x, y = _axes(kind)
    out = np.full((y.size, 3), np.nan)
    diags = []
    if isinstance(kind, FluctuationCurve):
        try:
            out[:] = cell_protocol(spec, i, 0).scan(y, config=spec.config).populations
        except (IntegrationError, ValueError, FloatingPointError) as exc:
            diags.append({"index": [i], "error": str(exc)})
        return i, out, diags
    for j in range(y.size):
        try:
            out[j] = cell_protocol(spec, i, j).run(spec.config)
        except (IntegrationError, ValueError, FloatingPointError) as exc:
            diags.append({"index": [i, j], "error": str(exc)})
    return i, out, diags


def evaluate_cell(spec: SweepSpec, i: int, j: int, frame: Optional[str] = None) -> np.ndarray:
    """Final populations of a single map cell, computed in isolation."""
    return np.asarray(cell_protocol(spec, i, j, frame).run(spec.config))


def _cell_key(spec: SweepSpec, i: int) -> str:
    payload = json.dumps({"spec": spec.to_dict(), "row": i, "version": __version__}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def run_sweep(
    spec: SweepSpec,
    *,
    jobs: int = 1,
    cache_dir: Optional[Union[str, Path]] = None,
) -> GridResult:
    """Evaluate every cell of ``spec``.

    Rows are independent tasks; with ``jobs > 1`` they run in worker
    processes and are reassembled by index. With ``cache_dir`` each finished
    row is stored under a hash of its inputs, and later runs reuse it.
    Integrator failures leave NaN cells plus a diagnostic entry. An interrupt
    returns the rows finished so far with ``complete=False``.
    """
    x_name, y_name, x, y = _axes(spec.kind)
    if isinstance(spec.kind, TauScan):
        # a single trajectory serves the whole scan
        pops = spec.base.scan(x, config=spec.config).populations
        cells = pops[:, None, :]
        result = GridResult(x_name, y_name, x, y, cells)
    else:
        cells = np.full((x.size, y.size, 3), np.nan)
        diagnostics: list = []
        cache = Path(cache_dir) if cache_dir else None
        if cache:
            cache.mkdir(parents=True, exist_ok=True)
        todo = []
        for i in range(x.size):
            f = cache / f"{_cell_key(spec, i)}.json" if cache else None
            if f is not None and f.exists():
                rec = json.loads(f.read_text())
                cells[i] = np.array(rec["values"], dtype=float)
                diagnostics.extend(rec["diagnostics"])
            else:
                todo.append(i)

        def store(i, vals, diags):
            cells[i] = vals
            diagnostics.extend(diags)
            if cache:
                rec = {"values": [[v if math.isfinite(v) else None for v in row] for row in vals.tolist()],
                       "diagnostics": diags}
                (cache / f"{_cell_key(spec, i)}.json").write_text(json.dumps(rec))

        complete = True
        try:
            if jobs > 1 and len(todo) > 1:
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    for i, vals, diags in pool.map(_row_task, [(spec, i) for i in todo]):
                        store(i, vals, diags)
            else:
                for i in todo:
                    store(*_row_task((spec, i)))
        except KeyboardInterrupt:
            # keep finished rows; unfinished ones stay NaN
            complete = False
        diagnostics.sort(key=lambda d: d["index"])
        result = GridResult(x_name, y_name, x, y, cells, diagnostics=diagnostics, complete=complete)
        if isinstance(spec.kind, FluctuationCurve):
            result.maxima = np.nanmax(cells, axis=1)
        if complete and spec.audit and spec.base.frame == "rwa" and isinstance(spec.kind, (StirapMap, DetuningMap)):
            result.audit = lab_frame_audit(spec, cells)
            if not result.audit_passed:
                log.warning("lab-frame audit exceeded %.3g: %s", AUDIT_TOL, result.audit)
    result.manifest = {"spec": spec.to_dict(), "version": __version__, "seed": spec.seed}
    return result


def audit_cells(nx: int, ny: int) -> list[tuple[int, int]]:
    cells = [(0, 0), (0, ny - 1), (nx - 1, 0), (nx - 1, ny - 1), (nx // 2, ny // 2)]
    return list(dict.fromkeys(cells))


def lab_frame_audit(spec: SweepSpec, rwa_cells: np.ndarray) -> list[dict]:
    """Recompute corner and centre cells in the lab frame and compare."""
    out = []
    nx, ny = rwa_cells.shape[:2]
    for i, j in audit_cells(nx, ny):
        lab = evaluate_cell(spec, i, j, frame="lab")
        dev = float(np.max(np.abs(lab - rwa_cells[i, j])))
        out.append({"index": [i, j], "rwa": rwa_cells[i, j].tolist(), "lab": lab.tolist(), "deviation": dev})
    return out


# --- metrics -----------------------------------------------------------------


def robust_area(g: Union[GridResult, np.ndarray], state: int, threshold: float) -> float:
    """Fraction of non-NaN cells whose ``state`` population is >= ``threshold``."""
    vals = g.state(state) if isinstance(g, GridResult) else np.asarray(g)
    finite = np.isfinite(vals)
    if not finite.any():
        raise ValueError("grid has no finite cells")
    return float(np.count_nonzero(vals[finite] >= threshold) / np.count_nonzero(finite))


def connected_region(mask: np.ndarray, seed: tuple[int, int]) -> np.ndarray:
    """4-connected component of ``mask`` containing ``seed`` (empty if seed is off)."""
    labels, _ = ndimage.label(mask)
    lab = labels[seed]
    return labels == lab if lab else np.zeros_like(mask, dtype=bool)


def nearest_index(grid, value: float) -> int:
    return int(np.argmin(np.abs(np.asarray(grid) - value)))
