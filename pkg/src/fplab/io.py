"""On-disk formats.

Binary field (``.bin``), all little-endian::

    int32 dimension | int32 n | float64 L | float64[n**dimension] values (row-major)

CSV field: header ``x,u`` (1-D) or ``x,y,u`` (2-D), one row per grid point,
17 significant digits.  A trajectory directory holds ``field_XXXXX.bin``
snapshots plus ``trajectory.json`` (model, config, times, file names).
Raw particle dumps: ``int64 N | int64 d | float64[N*d]`` positions.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from fplab.grid import PeriodicGrid, ScalarField
from fplab.pde import SolverConfig, Trajectory

_HEADER = struct.Struct("<iid")
_PARTICLE_HEADER = struct.Struct("<qq")
FLOAT_FMT = "%.17g"


def write_field(path, field: ScalarField) -> None:
    grid = field.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(grid.dimension, grid.n, grid.half_width))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path) -> ScalarField:
    raw = Path(path).read_bytes()
    d, n, L = _HEADER.unpack_from(raw)
    grid = PeriodicGrid(d, L, n)
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if values.size != grid.size:
        raise ValueError(f"{path}: payload has {values.size} values, expected {grid.size}")
    return ScalarField(grid, values.reshape(grid.shape).astype(float))


def write_field_csv(path, field: ScalarField) -> None:
    grid = field.grid
    cols = [c.ravel() for c in grid.coords] + [field.values.ravel()]
    header = ["x", "y"][: grid.dimension] + ["u"]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(header), comments="", fmt=FLOAT_FMT)


def write_trajectory(directory, traj: Trajectory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(len(traj)):
        name = f"field_{i:05d}.bin"
        write_field(directory / name, traj.field(i))
        files.append(name)
    meta = {
        "model": traj.model_name,
        "config": traj.config.to_dict() if traj.config else None,
        "times": [float(t) for t in traj.times],
        "files": files,
        "grid": {"dimension": traj.grid.dimension, "L": traj.grid.half_width, "n": traj.grid.n},
    }
    meta.update(traj.meta)
    if extra:
        meta.update(extra)
    (directory / "trajectory.json").write_text(json.dumps(meta, indent=2))
    return directory


def read_trajectory(directory) -> Trajectory:
    directory = Path(directory)
    meta = json.loads((directory / "trajectory.json").read_text())
    fields = [read_field(directory / name) for name in meta["files"]]
    grid = fields[0].grid
    cfg = SolverConfig(**meta["config"]) if meta.get("config") else None
    return Trajectory(grid, np.array(meta["times"]), [f.values for f in fields], meta.get("model", ""), cfg, meta)


def write_particles(path, positions: np.ndarray) -> None:
    N, d = positions.shape
    with open(path, "wb") as fh:
        fh.write(_PARTICLE_HEADER.pack(N, d))
        fh.write(np.ascontiguousarray(positions, dtype="<f8").tobytes())


def read_particles(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    N, d = _PARTICLE_HEADER.unpack_from(raw)
    return np.frombuffer(raw, dtype="<f8", offset=_PARTICLE_HEADER.size).reshape(N, d).copy()


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT % x
    return str(x)


def write_reports(directory, reports) -> None:
    """``report.txt`` (one ``key=value`` record per check) and ``report.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = [r.record() for r in reports]
    keys = ["name", "pass", "measured", "bound", "tolerance"]
    with open(directory / "report.txt", "w") as fh:
        for rec in records:
            fh.write(" ".join(f"{k}={_fmt(rec[k])}" for k in keys) + "\n")
    with open(directory / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for rec in records:
            w.writerow([_fmt(rec[k]) for k in keys])


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
