"""Shared output helpers for the experiment scripts."""

import argparse
import json
import time
from pathlib import Path

from nvraman import __version__

T0 = time.perf_counter()


def parser(doc: str, default_out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--out", type=Path, default=Path("results") / default_out, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    return p


def manifest(path: Path, **info) -> None:
    """Write ``<path>.json`` next to a data file."""
    body = {"script": Path(info.pop("script")).name, "version": __version__,
            "wall_time_s": round(time.perf_counter() - T0, 3), **info}
    path.with_name(path.name + ".json").write_text(json.dumps(body, indent=2, sort_keys=True, default=float) + "\n")
