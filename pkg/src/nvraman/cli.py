"""Command-line front end.

Every data file ``OUT`` gets a run manifest ``OUT.json`` holding the resolved
config, tool version and wall time; passing that manifest back as
``--config`` reproduces the data file byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
130 interrupted (partial grid saved).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .config import ENV_PREFIX, ConfigError, ExperimentConfig
from .drive import sample_waveform, seed_field_conversion, write_waveform
from .experiment import synthesize_counts
from .fitting import FitProblem, fit_simultaneous, load_series_csv, synthetic_data
from .nv import level_table, transition_frequencies
from .propagator import CalibrationError, IntegrationError, calibrate_amplitude
from .sweep import FluctuationCurve, run_sweep

log = logging.getLogger("nvraman")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INTERRUPT = 0, 2, 3, 130


class _Run:
    """Shared state of one command invocation."""

    def __init__(self, command: str, cfg: ExperimentConfig, args: argparse.Namespace):
        self.command, self.cfg, self.args = command, cfg, args
        self.t0 = time.perf_counter()

    def out_path(self, default: str) -> Path:
        out = self.cfg["run"]["output"] or default
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def manifest(self, path: Path, **extra) -> Path:
        mpath = path.with_name(path.name + ".json")
        body = {
            "command": self.command,
            "tool": "nvraman",
            "version": __version__,
            "config": self.cfg.to_dict(),
            "data_file": path.name,
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
            **extra,
        }
        mpath.write_text(json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")
        return mpath


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _fmt(p) -> str:
    return " ".join(f"{name}={v:.4f}" for name, v in zip(("P-1", "P0", "P+1"), p))


# --- commands -------------------------------------------------------------------


def cmd_levels(run: _Run) -> int:
    """Print the six hyperfine levels and four transition frequencies."""
    p, env = run.cfg.nv_params(), run.cfg.environment()
    rows = [("level", lab.m_s, lab.m_i, e) for lab, e in level_table(p, env)]
    for m_i in (0.5, -0.5):
        ts = transition_frequencies(p, env, m_i)
        rows += [("omega_minus", -1, m_i, ts.omega_minus), ("omega_plus", 1, m_i, ts.omega_plus)]
    for kind, m_s, m_i, f in rows:
        print(f"{kind:12s} m_S={m_s:+d} m_I={m_i:+.1f} {f:14.6f} MHz")
    if run.cfg["run"]["output"]:
        path = run.out_path("levels.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "m_s", "m_i", "frequency_mhz"])
            w.writerows([k, m_s, repr(m_i), repr(float(f))] for k, m_s, m_i, f in rows)
        run.manifest(path)
    return EXIT_OK


def cmd_run(run: _Run) -> int:
    """Run one protocol and report the final populations."""
    pr = run.cfg.protocol()
    pops = pr.run(run.cfg.integrator())
    path = run.out_path("run.json")
    path.write_text(json.dumps({"P_m1": pops[0], "P_0": pops[1], "P_p1": pops[2], "tau_us": pr.raman_length},
                               indent=2, sort_keys=True) + "\n")
    run.manifest(path)
    print(f"run: {pr.scheme} tau={pr.raman_length:.4f} us  {_fmt(pops)}  -> {path}")
    return EXIT_OK


def cmd_scan(run: _Run) -> int:
    """Populations versus Raman block length tau."""
    cfg = run.cfg
    res = cfg.protocol().scan(cfg.tau_grid(), method=cfg["sequence"]["scan_method"], config=cfg.integrator())
    if cfg["signal"]["synthesize"]:
        res.counts = synthesize_counts(res.populations, cfg.signal_model())
    path = run.out_path("scan.csv")
    res.to_csv(path)
    run.manifest(path, n_points=int(res.tau.size))
    if run.args.svg:
        _svg_lines(run.args.svg, res.tau, res.populations, "tau (us)")
    print(f"scan: {res.tau.size} points, final {_fmt(res.populations[-1])}, "
          f"max P+1={np.nanmax(res.populations[:, 2]):.4f}  -> {path}")
    return EXIT_OK


def cmd_map(run: _Run) -> int:
    """Parameter map or fluctuation curves over a sweep grid."""
    cfg = run.cfg
    spec = cfg.sweep_spec()
    cache = cfg["sweep"]["cache_dir"] or None
    g = run_sweep(spec, jobs=cfg["run"]["jobs"], cache_dir=cache)
    path = run.out_path("map.csv")
    g.to_csv(path)
    run.manifest(path, grid={"x_name": g.x_name, "y_name": g.y_name, "shape": list(g.cells.shape[:2]),
                             "complete": g.complete, "diagnostics": g.diagnostics, "audit": g.audit,
                             "audit_passed": g.audit_passed,
                             "maxima": g.maxima if g.maxima is not None else None})
    if run.args.svg:
        if isinstance(spec.kind, FluctuationCurve):
            _svg_lines(run.args.svg, g.y, g.cells[-1], "tau (us)")
        else:
            _svg_map(run.args.svg, g.x, g.y, g.state(1), g.x_name, g.y_name)
    n_nan = int(np.isnan(g.cells[..., 0]).sum())
    audit = "" if g.audit_passed is None else f", audit {'ok' if g.audit_passed else 'FAILED'}"
    print(f"map: {g.cells.shape[0]}x{g.cells.shape[1]} cells, {n_nan} NaN{audit}  -> {path}")
    if not g.complete:
        print("map: interrupted, partial grid saved", file=sys.stderr)
        return EXIT_INTERRUPT
    return EXIT_OK


def cmd_fit(run: _Run) -> int:
    """Fit the three-state model to tau-scan data."""
    cfg = run.cfg
    f = cfg["fit"]
    truth = cfg.protocol()
    if f["data_path"]:
        data = load_series_csv(f["data_path"])
        source = f["data_path"]
    else:
        data = synthetic_data(truth, cfg.tau_grid(), f["synthetic_counts"], cfg["run"]["seed"], cfg.integrator())
        source = "synthetic"
    problem = FitProblem(data, cfg.fit_bounds(), truth, initial=cfg.fit_start())
    res = fit_simultaneous(problem, cfg.fit_config())
    path = run.out_path("fit.json")
    res.write(path)
    run.manifest(path, data_source=source)
    params = " ".join(f"{k}={v:.4f}" for k, v in res.params.items())
    print(f"fit: chi2={res.objective:.4g} converged={res.converged} {params}  -> {path}")
    return EXIT_OK


def cmd_waveform(run: _Run) -> int:
    """Sample the Raman drive for an arbitrary waveform generator."""
    cfg = run.cfg
    drive = cfg.protocol().drive()
    w = sample_waveform(drive, cfg["drive"]["sample_rate_gsps"], drive.end_time)
    fmt = cfg["drive"]["waveform_format"]
    path = run.out_path("waveform.csv" if fmt == "csv" else "waveform.f32")
    _, mpath = write_waveform(w, path, fmt)
    inner = json.loads(mpath.read_text())
    run.manifest(path, waveform=inner)
    print(f"waveform: {w.n_samples} samples at {w.sample_rate:g} GSa/s over {w.t_end:.4f} us  -> {path}")
    return EXIT_OK


def cmd_calibrate(run: _Run) -> int:
    """Calibrate field amplitudes against lab-frame Rabi oscillations."""
    cfg = run.cfg
    p, env, d = cfg.nv_params(), cfg.environment(), cfg["drive"]
    seed = seed_field_conversion(p.gamma_e)
    out = {}
    for which, target in (("minus", d["omega_minus_mhz"]), ("plus", d["omega_plus_mhz"])):
        b = calibrate_amplitude(p, env, which, target, config=cfg.integrator())
        out[which] = {"target_mhz": target, "b_x_gauss": b, "gauss_per_mhz": b / target,
                      "seed_gauss_per_mhz": seed[which]}
        print(f"calibrate: {which} Omega={target:g} MHz -> B_x={b:.6f} G ({b / target:.6f} G/MHz)")
    path = run.out_path("calibration.json")
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    run.manifest(path)
    return EXIT_OK


COMMANDS: dict[str, Callable[[_Run], int]] = {
    "levels": cmd_levels,
    "run": cmd_run,
    "scan": cmd_scan,
    "map": cmd_map,
    "fit": cmd_fit,
    "waveform": cmd_waveform,
    "calibrate": cmd_calibrate,
}


# --- optional SVG rendering ---------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _svg_lines(path, t, pops, xlabel):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k, label in enumerate(("|-1>", "|0>", "|+1>")):
        ax.plot(t, pops[:, k], label=label)
    ax.set(xlabel=xlabel, ylabel="population", ylim=(-0.02, 1.02))
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _svg_map(path, x, y, z, xlabel, ylabel):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    mesh = ax.pcolormesh(x, y, z.T, shading="nearest", vmin=0, vmax=1)
    fig.colorbar(mesh, ax=ax, label="final P(+1)")
    ax.set(xlabel=xlabel, ylabel=ylabel)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# --- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvraman",
        description="Raman transitions and STIRAP in the NV-center ground state.",
        epilog=f"Config keys can be overridden with {ENV_PREFIX}<SECTION>__<KEY>=value.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config or JSON run manifest")
    common.add_argument("--out", help="output data file (manifest goes to OUT.json)")
    common.add_argument("--jobs", type=int, help="parallel sweep workers")
    common.add_argument("--frame", choices=("lab", "rwa"))
    common.add_argument("--seed", type=int)
    common.add_argument("--svg", help="also render an SVG plot (needs matplotlib)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip().splitlines()[0])
        if name == "map":
            sp.add_argument("--kind", choices=("stirap", "detuning", "dT", "dz"))
            sp.add_argument("--scheme", choices=("srt", "stirap"))
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    overrides = {"run.output": args.out, "run.jobs": args.jobs, "run.frame": args.frame, "run.seed": args.seed,
                 "sweep.kind": getattr(args, "kind", None), "drive.scheme": getattr(args, "scheme", None)}
    return cfg.with_overrides({k: v for k, v in overrides.items() if v is not None})


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](_Run(args.command, cfg, args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, CalibrationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # parameter combinations the physics modules reject (e.g. a negative carrier)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPT


if __name__ == "__main__":
    sys.exit(main())
