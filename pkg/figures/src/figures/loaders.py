"""Readers for the simulator's documented CSV and legacy-VTK output formats."""

import numpy as np


class SchemaError(ValueError):
    """Input file does not match the documented schema."""


def read_csv_columns(path: str, required: tuple[str, ...]) -> dict:
    """Header-row CSV as named float columns; missing columns are diagnosed."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise SchemaError(f"{path}: empty file, expected columns {required}")
        names = header.split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    missing = [c for c in required if c not in names]
    if missing:
        raise SchemaError(
            f"{path}: missing column(s) {missing}; found {names}"
        )
    if rows and any(len(r) != len(names) for r in rows):
        raise SchemaError(f"{path}: ragged rows do not match the header")
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(names)))
    return {name: data[:, i] for i, name in enumerate(names)}


def long_to_series(t: np.ndarray, x: np.ndarray, v: np.ndarray):
    """Split long-format (t, x, value) rows into per-time curves.

    Returns (times (T,), x (Nx,), values (T, Nx)); rows must form complete
    blocks that share the same x grid.
    """
    times = np.unique(t)
    xs = np.unique(x)
    if times.size * xs.size != t.size:
        raise SchemaError("long-format table is not a complete (t, x) grid")
    order = np.lexsort((x, t))
    values = v[order].reshape(times.size, xs.size)
    return times, xs, values


def read_vtk_structured_points(path: str) -> dict:
    """Parse the legacy-ASCII STRUCTURED_POINTS files written by the simulator.

    Returns dims (nx, ny, nz), spacing, origin, and point fields keyed by
    name: scalars with shape (nz, ny, nx) and vectors (nz, ny, nx, 3).
    """
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split("\n")
    meta = {"fields": {}}
    i = 0
    npoints = None
    dims = None
    while i < len(tokens):
        line = tokens[i].strip()
        i += 1
        if not line or line.startswith("#") or line in ("ASCII",):
            continue
        key = line.split()[0]
        if key == "DATASET":
            if line.split()[1] != "STRUCTURED_POINTS":
                raise SchemaError(f"{path}: expected STRUCTURED_POINTS, got {line}")
        elif key == "DIMENSIONS":
            dims = tuple(int(v) for v in line.split()[1:4])
            meta["dims"] = dims
        elif key == "ORIGIN":
            meta["origin"] = tuple(float(v) for v in line.split()[1:4])
        elif key == "SPACING":
            meta["spacing"] = tuple(float(v) for v in line.split()[1:4])
        elif key == "POINT_DATA":
            npoints = int(line.split()[1])
        elif key == "SCALARS":
            name = line.split()[1]
            if not tokens[i].strip().startswith("LOOKUP_TABLE"):
                raise SchemaError(f"{path}: SCALARS without LOOKUP_TABLE")
            i += 1
            vals = np.array(tokens[i : i + npoints], dtype=float)
            i += npoints
            nx, ny, nz = dims
            meta["fields"][name] = vals.reshape(nz, ny, nx)
        elif key == "VECTORS":
            name = line.split()[1]
            vals = np.array([tokens[i + k].split() for k in range(npoints)], dtype=float)
            i += npoints
            nx, ny, nz = dims
            meta["fields"][name] = vals.reshape(nz, ny, nx, 3)
    if dims is None or npoints is None:
        raise SchemaError(f"{path}: missing DIMENSIONS or POINT_DATA")
    required = ("spacing", "origin")
    for k in required:
        if k not in meta:
            raise SchemaError(f"{path}: missing {k.upper()} header")
    return meta
