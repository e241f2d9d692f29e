"""Serialization: flow binaries and CSV tables.

Binary layout (documented, little-endian throughout):

    magic   4 bytes  b"MKVF"
    version u32      currently 1
    dim     u32
    n       u32      points per axis
    extent  f64      torus side length
    m       u32      number of stored times
    times   m * f64
    data    m * n**dim * f64   densities, C order, time-major

The initial datum is not stored; round trips reattach the first stored
density as the anchor.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

from .grids import GridSpec, ScalarField
from .solver import MeasureFlow

__all__ = ["write_flow", "read_flow", "write_csv_rows", "read_csv_rows",
           "flow_density_table"]

MAGIC = b"MKVF"
VERSION = 1


def write_flow(flow: MeasureFlow, path):
    grid = flow.grid
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, grid.dim, grid.points_per_dim))
        fh.write(struct.pack("<d", grid.extent))
        fh.write(struct.pack("<I", flow.times.size))
        fh.write(flow.times.astype("<f8").tobytes())
        for rho in flow.densities:
            fh.write(np.ascontiguousarray(rho.values, dtype="<f8").tobytes())


def read_flow(path) -> MeasureFlow:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path} is not a flow binary")
        version, dim, n = struct.unpack("<III", fh.read(12))
        if version != VERSION:
            raise ValueError(f"unsupported flow binary version {version}")
        (extent,) = struct.unpack("<d", fh.read(8))
        (m,) = struct.unpack("<I", fh.read(4))
        times = np.frombuffer(fh.read(8 * m), dtype="<f8").copy()
        grid = GridSpec(dim, n, extent)
        count = n**dim
        densities = []
        for _ in range(m):
            vals = np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
            densities.append(ScalarField(grid, vals.reshape(grid.shape)))
    return MeasureFlow(times, densities, densities[0])


def flow_density_table(flow: MeasureFlow, path):
    """Per-time CSV density table: columns t, x[, y], density."""
    grid = flow.grid
    coords = grid.coords()
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        if grid.dim == 1:
            wr.writerow(["t", "x", "density"])
            for t, rho in zip(flow.times, flow.densities):
                for x, v in zip(coords[0], rho.values):
                    wr.writerow([f"{t:.12g}", f"{x:.12g}", f"{v:.17g}"])
        else:
            wr.writerow(["t", "x", "y", "density"])
            xs, ys = coords
            for t, rho in zip(flow.times, flow.densities):
                for idx in np.ndindex(grid.shape):
                    wr.writerow([f"{t:.12g}", f"{xs[idx]:.12g}",
                                 f"{ys[idx]:.12g}", f"{rho.values[idx]:.17g}"])


def write_csv_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])


def read_csv_rows(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        return header, [row for row in rd]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return v
