"""On-disk formats for run artifacts.

Three formats:

* field snapshots: a flat binary layout.  Header = grid size N (uint32),
  the four periods (float64), the field name (length-prefixed UTF-8),
  and the component count (uint32); body = row-major point-then-component
  float64 values, little-endian throughout.
* history CSV: one row per flow record, fixed column order.
* curves / tubes: JSON with point lists, parameters, and diagnostics;
  distance matrices as CSV.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .grid import DIM, TorusGrid
from .metric import MetricField

MAGIC = b"L2FB"

HISTORY_COLUMNS = (
    "step", "t", "dt", "F", "G", "vol",
    "sup_rm", "sup_d1rm", "sup_d2rm", "sup_d3rm", "grad_l2_sq",
)


def write_field(path, grid: TorusGrid, name: str, data: np.ndarray) -> None:
    """Write a grid field (grid shape + trailing component axes)."""
    data = np.asarray(data, dtype="<f8")
    if data.shape[:DIM] != grid.shape:
        raise ValueError("field does not match the grid shape")
    ncomp = int(np.prod(data.shape[DIM:], dtype=np.int64)) if data.ndim > DIM else 1
    raw = name.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", grid.n))
        f.write(struct.pack("<4d", *map(float, grid.periods)))
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        f.write(struct.pack("<I", ncomp))
        f.write(data.reshape(grid.shape + (ncomp,)).tobytes(order="C"))


def read_field(path):
    """Read a field snapshot; returns (grid, name, data)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a field snapshot")
        n = struct.unpack("<I", f.read(4))[0]
        periods = struct.unpack("<4d", f.read(32))
        nlen = struct.unpack("<I", f.read(4))[0]
        name = f.read(nlen).decode("utf-8")
        ncomp = struct.unpack("<I", f.read(4))[0]
        body = np.frombuffer(f.read(), dtype="<f8")
    grid = TorusGrid(n, periods=periods)
    data = body.reshape(grid.shape + (ncomp,))
    if ncomp == 1:
        data = data[..., 0]
    elif ncomp == DIM * DIM:
        data = data.reshape(grid.shape + (DIM, DIM))
    return grid, name, data


def write_metric(path, metric: MetricField, name: str = "metric") -> None:
    write_field(path, metric.grid, name, metric.g)


def read_metric(path) -> MetricField:
    grid, _, data = read_field(path)
    return MetricField(grid, data.reshape(grid.shape + (DIM, DIM)))


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    # repr round-trips float64 exactly and is platform-stable
    return repr(float(value))


def write_history(path, history) -> None:
    """Write flow history rows (dicts keyed by HISTORY_COLUMNS) to CSV."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([_fmt(row[c]) for c in HISTORY_COLUMNS])


def read_history(path):
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            row = {c: (int(rec[c]) if c == "step" else float(rec[c]))
                   for c in HISTORY_COLUMNS}
            rows.append(row)
    return rows


def curve_to_dict(curve, metric: MetricField = None) -> dict:
    out = {
        "points": np.asarray(curve.points).tolist(),
        "num_samples": int(curve.num_samples),
    }
    if metric is not None:
        out["length"] = float(curve.length(metric))
    return out


def tube_to_dict(tube, diagnostics: dict = None) -> dict:
    out = {
        "radius": float(tube.radius),
        "disc_params": np.asarray(tube.disc_params).tolist(),
        "curve": curve_to_dict(tube.curve, tube.metric),
        "disc_areas": [float(d["area"]) for d in tube.discs],
    }
    if diagnostics is not None:
        out["diagnostics"] = {
            k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
            for k, v in diagnostics.items()
        }
    return out


def write_json(path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_distance_matrix(path, points: np.ndarray, dmat: np.ndarray) -> None:
    """CSV with point coordinates in a header block then the matrix."""
    points = np.asarray(points)
    dmat = np.asarray(dmat)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["point"] + [f"x{a}" for a in range(DIM)])
        for k, p in enumerate(points):
            w.writerow([k] + [_fmt(c) for c in p])
        w.writerow([])
        w.writerow(["d"] + [str(k) for k in range(len(points))])
        for k, row in enumerate(dmat):
            w.writerow([k] + [_fmt(v) for v in row])


def write_snapshots(outdir, trace, every: int = 1) -> list:
    """Write metric snapshots for a trace's sampled states; returns paths."""
    outdir = Path(outdir)
    paths = []
    for k, state in enumerate(trace.states):
        if k % every:
            continue
        p = outdir / f"snapshot_{k:04d}.bin"
        write_metric(p, state.metric, name=f"metric@t={state.t:.9e}")
        paths.append(p)
    return paths
