"""Plain-text artifact formats.

Fields are CSV with header ``x,y,u1,u2``, one row per node, row-major over the
grid (y outer, x inner). Traces are CSV with header
``step,time,boundary_node_id,x,y,nu_x,nu_y,f1,f2``. All floats are written
with 17 significant digits so a write/read cycle is exact.
"""

import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ShapeError
from .spatial import DIM, Grid2D

_MOD = "pipeline_cli"

FLOAT_FMT = "%.17g"
FIELD_HEADER = "x,y,u1,u2"
TRACE_HEADER = "step,time,boundary_node_id,x,y,nu_x,nu_y,f1,f2"


def _savetxt(path, table, header, fmt=FLOAT_FMT):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table, fmt=fmt, delimiter=",", header=header, comments="")


def _loadtxt(path, header):
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
    if first != header:
        raise ShapeError(f"{path}: expected header {header!r}, found {first!r}", _MOD)
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_field(path, u, grid):
    u = grid.check_field(u)
    X, Y = grid.mesh()
    table = np.column_stack([X.ravel(), Y.ravel(), u[0].ravel(), u[1].ravel()])
    _savetxt(path, table, FIELD_HEADER)


def read_field(path, grid=None):
    """Read a field CSV. Returns ``(field, grid)``; the grid is inferred unless given."""
    data = _loadtxt(path, FIELD_HEADER)
    xs, ys = np.unique(data[:, 0]), np.unique(data[:, 1])
    if grid is None:
        grid = Grid2D(len(xs), len(ys), xs[0], xs[-1], ys[0], ys[-1])
    if data.shape[0] != grid.n_nodes:
        raise ShapeError(f"{path}: {data.shape[0]} rows for a {grid.nx}x{grid.ny} grid", _MOD)
    X, Y = grid.mesh()
    tol = 1e-9 * max(grid.hx, grid.hy)
    if np.max(np.abs(data[:, 0] - X.ravel())) > tol or np.max(np.abs(data[:, 1] - Y.ravel())) > tol:
        raise ShapeError(f"{path}: node coordinates do not match the grid ordering", _MOD)
    u = np.stack([data[:, 2].reshape(grid.shape), data[:, 3].reshape(grid.shape)])
    return u, grid


def write_trace(path, trace, grid):
    """Write a `BoundaryTimeSeries` as one row per (step, boundary node)."""
    vals = trace.values
    n_t, nb, _ = vals.shape
    bn = grid.boundary_nodes
    bx, by = grid.boundary_coordinates()
    step = np.repeat(np.arange(n_t), nb)
    table = np.column_stack([
        step, np.repeat(trace.times, nb), np.tile(np.arange(nb), n_t),
        np.tile(bx, n_t), np.tile(by, n_t), np.tile(bn[:, 2], n_t), np.tile(bn[:, 3], n_t),
        vals[:, :, 0].ravel(), vals[:, :, 1].ravel(),
    ])
    fmt = ["%d", FLOAT_FMT, "%d", FLOAT_FMT, FLOAT_FMT, "%d", "%d", FLOAT_FMT, FLOAT_FMT]
    _savetxt(path, table, TRACE_HEADER, fmt=fmt)


def read_trace(path, grid):
    """Read a trace CSV written for ``grid``; returns ``(values, times)``."""
    data = _loadtxt(path, TRACE_HEADER)
    nb = grid.n_boundary
    if data.shape[0] % nb:
        raise ShapeError(f"{path}: {data.shape[0]} rows is not a multiple of {nb} boundary nodes", _MOD)
    n_t = data.shape[0] // nb
    ids = data[:, 2].astype(int).reshape(n_t, nb)
    if not np.array_equal(ids, np.broadcast_to(np.arange(nb), ids.shape)):
        raise ShapeError(f"{path}: boundary node ids out of order", _MOD)
    bn = grid.boundary_nodes
    if not np.array_equal(data[:nb, 5:7].astype(int), bn[:, 2:4]):
        raise ShapeError(f"{path}: boundary normals do not match the grid", _MOD)
    values = data[:, 7:9].reshape(n_t, nb, DIM)
    times = data[::nb, 1]
    return values, times


def write_convergence(path, increments):
    rows = []
    for k, inc in enumerate(increments, start=1):
        li = math.log(inc) if 0 < inc < math.inf else (-math.inf if inc == 0 else math.inf)
        rows.append(f"{k},{FLOAT_FMT % inc},{FLOAT_FMT % li}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("k,increment,log_increment\n" + "".join(r + "\n" for r in rows))


def write_coupling_tables(outdir, couplings):
    S, A = np.asarray(couplings.S), np.asarray(couplings.A)
    m, n = np.indices(S.shape)
    _savetxt(Path(outdir) / "S.csv", np.column_stack([m.ravel(), n.ravel(), S.ravel()]),
             "m,n,value", fmt=["%d", "%d", FLOAT_FMT])
    m, n, l = np.indices(A.shape)
    _savetxt(Path(outdir) / "A.csv", np.column_stack([m.ravel(), n.ravel(), l.ravel(), A.ravel()]),
             "m,n,l,value", fmt=["%d", "%d", "%d", FLOAT_FMT])


def dumps_json(obj):
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps_json(obj))


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})", _MOD) from exc


def ensure_writable(outdir):
    """Create ``outdir`` if needed and check it accepts files."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if not os.access(outdir, os.W_OK):
        raise PermissionError(f"output directory {outdir} is not writable")
    return outdir
