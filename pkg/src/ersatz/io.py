"""Output bundles: slice CSV, report text, convergence CSV, manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .solver import Trajectory


def fmt(x) -> str:
    """Full-precision float text; integers, strings and None pass through."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def slice_csv(traj: Trajectory, slices: Sequence[int] | None = None) -> str:
    """One row per (stored slice, node): t, x_1..x_d, value, branch flag."""
    grid = traj.grid
    header = ["t"] + [f"x{i + 1}" for i in range(grid.dim)] + ["value", "branch_active"]
    times = traj.times[traj.stored]
    picks = range(len(times)) if slices is None else slices
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    coords = [[fmt(c) for c in row] for row in grid.coords]
    for p in picks:
        t = fmt(times[p])
        vals, br = traj.values[p], traj.branch[p]
        for j in range(grid.n):
            w.writerow([t, *coords[j], fmt(vals[j]), "1" if br[j] else "0"])
    return buf.getvalue()


def report_text(items: Iterable[tuple[str, object]]) -> str:
    """Flat ``key = value`` block."""
    return "".join(f"{k} = {fmt(v)}\n" for k, v in items)


def report_csv(items: Iterable[tuple[str, object]]) -> str:
    return csv_text(["field", "value"], items)


def _versions() -> dict:
    import scipy
    import yaml

    from . import __version__

    return {
        "ersatz": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }


class OutputBundle:
    """Collects text artifacts and writes them into one directory.

    Timings live in ``timings.json`` so that every other file is byte-identical
    across reruns of the same config and seed.
    """

    def __init__(self, out_dir, command: str, config=None, seed: int | None = None):
        self.out_dir = Path(out_dir)
        self.command = command
        self.config = config
        self.seed = seed
        self.files: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self.summary: dict = {}

    def add(self, name: str, text: str):
        self.files[name] = text

    def manifest(self) -> dict:
        out = {
            "command": self.command,
            "seed": self.seed,
            "versions": _versions(),
            "files": {n: hashlib.sha256(t.encode()).hexdigest() for n, t in sorted(self.files.items())},
            "summary": self.summary,
        }
        if self.config is not None:
            out["config_hash"] = self.config.config_hash()
            out["config"] = self.config.semantic()
        return out

    def write(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in sorted(self.files.items()):
            (self.out_dir / name).write_text(text, encoding="utf-8", newline="")
        if self.config is not None:
            (self.out_dir / "config.yaml").write_text(self.config.dump(), encoding="utf-8")
        (self.out_dir / "manifest.json").write_text(
            json.dumps(self.manifest(), indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8"
        )
        (self.out_dir / "timings.json").write_text(
            json.dumps({k: round(v, 6) for k, v in self.timings.items()}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        return self.out_dir


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
