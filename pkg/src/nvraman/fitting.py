"""Simultaneous three-state fits of simulated dynamics to tau-scan data."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np
from scipy.optimize import minimize

from . import __version__
from .experiment import Protocol
from .propagator import IntegrationError, IntegratorConfig

log = logging.getLogger(__name__)

# fit parameter name -> Protocol field
FIT_PARAMETERS = {
    "omega_minus": "omega_minus",
    "omega_plus": "omega_plus",
    "delta_minus": "detuning_minus",
    "delta_plus": "detuning_plus",
    "gamma_phi": "gamma_phi",
}
STATES = (-1, 0, 1)


@dataclass(frozen=True)
class Series:
    """One state's data: tau (us), measured population and its uncertainty."""

    tau: np.ndarray
    value: np.ndarray
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        value = np.asarray(self.value, dtype=float)
        sigma = np.ones_like(value) if self.sigma is None else np.asarray(self.sigma, dtype=float)
        if tau.ndim != 1 or tau.shape != value.shape or sigma.shape != value.shape:
            raise ValueError("series tau, value and sigma must be 1-D and equally long")
        if tau.size == 0 or np.any(np.diff(tau) <= 0) or tau[0] < 0:
            raise ValueError("series tau must be non-empty, non-negative and strictly increasing")
        if np.any(sigma <= 0):
            raise ValueError("uncertainties must be > 0")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class FitProblem:
    data: Mapping[int, Series]
    bounds: Mapping[str, tuple[float, float]]
    base: Protocol = field(default_factory=Protocol)
    initial: Optional[Mapping[str, float]] = None
    config: IntegratorConfig = field(default_factory=lambda: IntegratorConfig(rtol=1e-7, atol=1e-9))

    def __post_init__(self):
        if not self.bounds:
            raise ValueError("a fit needs at least one free parameter")
        for name, (lo, hi) in self.bounds.items():
            if name not in FIT_PARAMETERS:
                raise ValueError(f"unknown fit parameter {name!r}; expected one of {sorted(FIT_PARAMETERS)}")
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"bounds for {name} must be finite with lo < hi")
        if not self.data or any(s not in STATES for s in self.data):
            raise ValueError("data must map m_S in (-1, 0, 1) to series")
        for name, v in self.x0_dict().items():
            lo, hi = self.bounds[name]
            if not lo <= v <= hi:
                raise ValueError(f"initial {name}={v} lies outside its bounds")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.bounds)

    def x0_dict(self) -> dict[str, float]:
        init = dict(self.initial or {})
        return {n: float(init.get(n, getattr(self.base, FIT_PARAMETERS[n]))) for n in self.names}

    @property
    def tau_union(self) -> np.ndarray:
        return np.unique(np.concatenate([s.tau for s in self.data.values()]))

    def protocol(self, params: Mapping[str, float]) -> Protocol:
        return replace(self.base, **{FIT_PARAMETERS[k]: float(v) for k, v in params.items()})

    def simulate(self, params: Mapping[str, float]) -> dict[int, np.ndarray]:
        tau = self.tau_union
        pops = self.protocol(params).scan(tau, config=self.config).populations
        return {s: pops[np.searchsorted(tau, ser.tau), s + 1] for s, ser in self.data.items()}

    def residuals(self, params: Mapping[str, float]) -> dict[int, np.ndarray]:
        sim = self.simulate(params)
        return {s: (sim[s] - ser.value) / ser.sigma for s, ser in self.data.items()}

    def objective(self, params: Mapping[str, float]) -> float:
        return float(sum(np.sum(r**2) for r in self.residuals(params).values()))

    def window(self, t_max: float) -> "FitProblem":
        """Same problem restricted to points with tau <= t_max."""
        data = {}
        for s, ser in self.data.items():
            keep = ser.tau <= t_max
            if keep.any():
                data[s] = Series(ser.tau[keep], ser.value[keep], ser.sigma[keep])
        return replace(self, data=data)


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 3
    jitter: float = 0.1           # fraction of each bound range
    rel_tol: float = 1e-6         # simplex objective spread relative to the best value
    max_evals: int = 2000         # per start
    xatol: float = 1e-5           # simplex size in parameter units
    mirror: bool = True           # extra start from the -1 <-> +1 swapped optimum
    windows: tuple[float, ...] = (0.25, 0.5, 1.0)   # tau-window continuation, fractions of the data span
    hold_first: tuple[str, ...] = ("omega_minus", "omega_plus")   # fixed during continuation
    seed: int = 0

    def __post_init__(self):
        if not self.windows or self.windows[-1] != 1.0 or any(not 0 < w <= 1 for w in self.windows):
            raise ValueError("fit windows must lie in (0, 1] and end with 1.0")


@dataclass
class FitResult:
    params: dict[str, float]
    objective: float
    initial_objective: float
    n_evals: int
    n_iterations: int
    converged: bool
    residuals: dict[int, np.ndarray]
    trace: list[float]
    bounds: dict[str, tuple[float, float]]
    starts: list[dict]
    seed: int

    def to_dict(self) -> dict:
        return {
            "params": self.params,
            "bounds": {k: list(v) for k, v in self.bounds.items()},
            "objective": self.objective,
            "initial_objective": self.initial_objective,
            "n_evals": self.n_evals,
            "n_iterations": self.n_iterations,
            "converged": self.converged,
            "residuals": {str(k): v.tolist() for k, v in self.residuals.items()},
            "trace": self.trace,
            "starts": self.starts,
            "seed": self.seed,
            "version": __version__,
        }

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _local_search(f, x0, lo, hi, config: FitConfig) -> tuple[np.ndarray, float, int, bool]:
    """Nelder-Mead, re-seeded from its own optimum until a pass stops improving.

    Each pass stops when the simplex objective spread falls below
    ``rel_tol * f_best``; the re-seed rebuilds a full-size simplex, which
    guards against premature collapse.
    """
    x, fx = np.asarray(x0, dtype=float), float(f(x0))
    used = 1
    bounds = list(zip(lo, hi))
    while used < config.max_evals:
        res = minimize(f, x, method="Nelder-Mead", bounds=bounds,
                       options={"maxfev": config.max_evals - used, "xatol": config.xatol,
                                "fatol": config.rel_tol * max(abs(fx), 1e-12), "adaptive": len(x) > 3})
        used += int(res.nfev)
        improved = fx - float(res.fun)
        if res.fun < fx:
            x, fx = np.asarray(res.x, dtype=float), float(res.fun)
        if res.status != 0:
            return x, fx, used, False
        if improved <= config.rel_tol * max(abs(fx), 1e-12):
            return x, fx, used, True
    return x, fx, used, False


def _mirror(names, x) -> np.ndarray:
    """Swap the -1 and +1 transition parameters.

    Swapping the detunings flips the sign of the two-photon detuning, to which
    the populations are nearly insensitive, so a search started near
    delta_- = delta_+ can settle in the wrong-sign basin.
    """
    pos = {n: i for i, n in enumerate(names)}
    out = np.array(x, dtype=float)
    for a, b in (("omega_minus", "omega_plus"), ("delta_minus", "delta_plus")):
        if a in pos and b in pos:
            out[pos[a]], out[pos[b]] = x[pos[b]], x[pos[a]]
    return out


def fit_simultaneous(problem: FitProblem, config: FitConfig = FitConfig()) -> FitResult:
    """Bounded Nelder-Mead from the initial point plus jittered restarts.

    The best result over all starts is returned, flagged as converged when at
    least one start met the tolerance within its evaluation budget.

    Restart ``k`` starts from the initial point displaced by a uniform draw of
    +-``jitter`` times each bound range (clipped to bounds); the draws come from
    ``default_rng(config.seed)`` and are recorded in ``FitResult.starts``.
    With ``config.mirror`` a final start is placed at the best continuation
    endpoint with the -1 and +1 parameters exchanged.

    Each start is a continuation over ``config.windows``: the search first
    fits the early part of the tau range, where the objective has wide basins,
    then re-fits on longer windows from that optimum. Only full-window
    evaluations enter the trace and the best-so-far. Parameters named in
    ``config.hold_first`` stay at their start values during the continuation
    and are released in a final full-window pass; an amplitude imbalance
    otherwise mimics a differential detuning through the AC Stark shift.
    """
    names = problem.names
    lo = np.array([problem.bounds[n][0] for n in names])
    hi = np.array([problem.bounds[n][1] for n in names])
    x_init = np.array([problem.x0_dict()[n] for n in names])
    rng = np.random.default_rng(config.seed)
    starts = [x_init] + [
        np.clip(x_init + rng.uniform(-1, 1, len(names)) * config.jitter * (hi - lo), lo, hi)
        for _ in range(config.restarts)
    ]

    trace: list[float] = []
    best = {"f": np.inf, "x": x_init}
    t_span = max(float(ser.tau[-1]) for ser in problem.data.values())
    stages = [problem.window(w * t_span) if w < 1.0 else problem for w in config.windows]

    def objective_fn(prob):
        full = prob is problem

        def f(x):
            params = dict(zip(names, map(float, x)))
            try:
                val = prob.objective(params)
            except (IntegrationError, ValueError):
                val = np.inf
            if full:
                if val < best["f"]:
                    best.update(f=val, x=np.array(x, dtype=float))
                trace.append(val if np.isfinite(val) else None)
            return val
        return f

    stage_fns = [objective_fn(prob) for prob in stages]
    initial_objective = stage_fns[-1](x_init)
    n_evals, start_log = 1, []

    held = np.array([n in config.hold_first for n in names])
    passes = [(f, held) for f in stage_fns] + ([(stage_fns[-1], np.zeros_like(held))] if held.any() else [])

    held_ends: list[tuple[float, np.ndarray]] = []

    def search(k, x0, label):
        nonlocal n_evals
        t0 = time.perf_counter()
        x, used_total = np.array(x0, dtype=float), 0
        for i, (f, hold) in enumerate(passes):
            free = ~hold
            if not free.any():
                continue

            def f_sub(z, f=f, free=free, base=x.copy()):
                full = base.copy()
                full[free] = z
                return f(full)

            z, fx, used, ok = _local_search(f_sub, x[free], lo[free], hi[free], config)
            x[free] = z
            used_total += used
            if i == len(stage_fns) - 1:
                held_ends.append((fx, x.copy()))
        n_evals += used_total
        start_log.append({"kind": label, "start": dict(zip(names, x0.tolist())), "end": dict(zip(names, x.tolist())),
                          "objective": fx, "n_evals": used_total, "converged": ok,
                          "seconds": time.perf_counter() - t0})
        log.info("fit start %d (%s, seed %d): objective %.6g after %d evals", k, label, config.seed, fx, used_total)

    for k, x0 in enumerate(starts):
        search(k, x0, "initial" if k == 0 else "jitter")
    if config.mirror:
        # mirror the best continuation endpoint, before amplitudes were released
        x_ref = min(held_ends, key=lambda e: e[0])[1]
        x_m = np.clip(_mirror(names, x_ref), lo, hi)
        if not np.allclose(x_m, x_ref):
            search(len(starts), x_m, "mirror")

    params = dict(zip(names, best["x"].tolist()))
    return FitResult(
        params=params,
        objective=float(best["f"]),
        initial_objective=float(initial_objective),
        n_evals=n_evals,
        n_iterations=len(trace),
        converged=min(start_log, key=lambda r: r["objective"])["converged"],
        residuals=problem.residuals(params),
        trace=trace,
        bounds={n: tuple(map(float, problem.bounds[n])) for n in names},
        starts=start_log,
        seed=config.seed,
    )


def synthetic_data(
    protocol: Protocol,
    tau,
    counts: float = 1e4,
    seed: int = 0,
    config: IntegratorConfig = IntegratorConfig(),
) -> dict[int, Series]:
    """Three-state data with Poisson noise at ``counts`` effective counts per point.

    Each population is estimated as k / counts with k ~ Poisson(counts * P);
    the uncertainty is sqrt(max(k, 1)) / counts. ``counts=inf`` gives noise-free
    data with unit uncertainties.
    """
    tau = np.asarray(tau, dtype=float)
    pops = np.clip(protocol.scan(tau, config=config).populations, 0.0, 1.0)
    if not np.isfinite(counts):
        return {s: Series(tau, pops[:, s + 1]) for s in STATES}
    rng = np.random.default_rng(seed)
    k = rng.poisson(counts * pops)
    return {s: Series(tau, k[:, s + 1] / counts, np.sqrt(np.maximum(k[:, s + 1], 1)) / counts) for s in STATES}


def load_series_csv(path: Union[str, Path]) -> dict[int, Series]:
    """Read ``tau_us,P_m1,P_0,P_p1[,sigma_m1,sigma_0,sigma_p1]``."""
    arr = np.genfromtxt(path, delimiter=",", names=True)
    cols = {-1: "P_m1", 0: "P_0", 1: "P_p1"}
    sig = {-1: "sigma_m1", 0: "sigma_0", 1: "sigma_p1"}
    out = {}
    for s, c in cols.items():
        if c in arr.dtype.names:
            out[s] = Series(arr["tau_us"], arr[c], arr[sig[s]] if sig[s] in arr.dtype.names else None)
    return out
