"""Snapshot, manifest, time-series, and report persistence.

Snapshot format (binary, little-endian):
  magic "CSCD" | version u32 | dim u32 | n u32 | t f64 | nu f64 | field_count u32
followed by field_count scalar fields as row-major f64 physical values.
Fields are the dim velocity components, then (if present) the dim components
of the active force. Manifests and reports are line-oriented key=value text;
time series are CSV with a header row.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .grid import Grid, forward_transform, inverse_transform

MAGIC = b"CSCD"
VERSION = 1
_HEADER = struct.Struct("<4sIII d d I")


def write_snapshot_file(path, grid: Grid, t, nu, fields) -> None:
    """Write named physical scalar fields after the fixed header."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(MAGIC, VERSION, grid.dim, grid.n, float(t), float(nu), len(fields))
        )
        for field in fields:
            arr = np.ascontiguousarray(field, dtype="<f8")
            if arr.shape != grid.shape:
                raise ValueError("snapshot field has wrong shape")
            fh.write(arr.tobytes())


def read_snapshot_file(path) -> dict:
    """Read a snapshot; returns dict with grid, t, nu, u (spectral), fh or None."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, dim, n, t, nu, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path} is not a CSCD snapshot")
        if version != VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        grid = Grid(dim, n)
        fields = []
        for _ in range(count):
            buf = fh.read(8 * n**dim)
            fields.append(
                np.frombuffer(buf, dtype="<f8").reshape(grid.shape).astype(np.float64)
            )
    u = np.stack(fields[:dim])
    uh = forward_transform(grid, u)
    fh_spec = None
    if count >= 2 * dim:
        f = np.stack(fields[dim : 2 * dim])
        fh_spec = forward_transform(grid, f)
    return {"grid": grid, "t": t, "nu": nu, "uh": uh, "fh": fh_spec}


def state_fields(state) -> list:
    grid = state.grid
    u = inverse_transform(grid, state.uh)
    fields = [u[i] for i in range(grid.dim)]
    if state.fh is not None:
        f = inverse_transform(grid, state.fh)
        fields += [f[i] for i in range(grid.dim)]
    return fields


def write_manifest(path, entries: dict) -> None:
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def write_report(path, entries: dict) -> None:
    write_manifest(path, entries)


def read_report(path) -> dict:
    return read_manifest(path)


class RunWriter:
    """Owns a run directory: time series CSV, snapshots, manifest."""

    def __init__(self, out_dir, timeseries_columns):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.columns = list(timeseries_columns)
        self._ts_path = self.dir / "timeseries.csv"
        self._ts_file = open(self._ts_path, "w", newline="")
        self._ts = csv.writer(self._ts_file)
        self._ts.writerow(self.columns)

    def append_timeseries(self, record) -> None:
        row = asdict(record) if not isinstance(record, dict) else record
        self._ts.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in self.columns])

    def write_snapshot(self, state, label: str | None = None) -> Path:
        name = label if label else f"snap_{state.step_index:08d}"
        path = self.dir / f"{name}.cscd"
        write_snapshot_file(path, state.grid, state.t, state.nu, state_fields(state))
        return path

    def write_manifest(self, entries: dict) -> None:
        write_manifest(self.dir / "manifest.txt", entries)

    def close(self) -> None:
        if not self._ts_file.closed:
            self._ts_file.close()


def read_timeseries(path) -> dict:
    """Load a time-series CSV as a dict of float arrays keyed by column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, row)) for row in reader if row]
    data = np.array(rows) if rows else np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def list_snapshots(run_dir) -> list:
    """Numbered snapshots in step order (excludes final/abort labels)."""
    run_dir = Path(run_dir)
    snaps = sorted(run_dir.glob("snap_*.cscd"))
    return snaps
