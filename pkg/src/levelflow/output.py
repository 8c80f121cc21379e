"""Legacy ASCII VTK snapshots and CSV time series."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from .fem import evaluate_at_lattice


@dataclass
class MetricsRow:
    """One line of the time series.

    ``x_c``, ``y_c``, ``u_c`` and ``area`` refer to the tracked phase
    ({phi > 0} for ``plus``, {phi < 0} for ``minus``); an empty phase gives
    zero centers and ``empty = 1``.
    """

    step: int
    t: float
    dt: float
    x_c: float
    y_c: float
    u_c: float
    area: float
    empty: int
    div_norm: float
    min_h: float
    n_cells: int
    phi_max: float
    phi_min: float
    rho_min: float
    rho_max: float
    mu_min: float
    mu_max: float
    dt_cfl_ls: float
    dt_cfl_ns: float


COLUMNS = tuple(f.name for f in fields(MetricsRow))
_INT_COLUMNS = {"step", "empty", "n_cells"}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def write_csv(rows, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in rows:
                w.writerow([_fmt(v) for v in astuple(r)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> list[MetricsRow]:
    with Path(path).open(newline="") as fh:
        rd = csv.DictReader(fh)
        return [MetricsRow(**{k: int(v) if k in _INT_COLUMNS else float(v) for k, v in rec.items()}) for rec in rd]


def _cell_means(arr, n_cells: int) -> np.ndarray:
    if arr is None:
        return np.zeros(n_cells)
    a = np.asarray(arr, dtype=float)
    return a.mean(axis=1) if a.ndim == 2 else a


def write_vtk(state, path) -> Path:
    """Unstructured quad grid on the Q1 nodes with fields and cell data."""
    path = Path(path)
    phi = state.ls.phi
    sp_ = phi.space
    mesh = state.mesh
    X = sp_.node_coords
    n, E = sp_.n_nodes, mesh.n_cells
    if state.ns is not None:
        U = evaluate_at_lattice(state.ns.U_n, sp_.node_I, sp_.node_J)
        P = state.ns.P_n.values
    else:
        U = np.zeros((n, 2))
        P = np.zeros(n)
    info = state.ls_info
    visc = info.visc_stage3 if info is not None else None
    mats = state.materials
    cell = {
        "mu_stab": _cell_means(None if visc is None else visc.mu_stab, E),
        "mu_lin": _cell_means(None if visc is None else visc.mu_lin, E),
        "mu_ent": _cell_means(None if visc is None else visc.mu_ent, E),
        "rho": _cell_means(None if mats is None else mats.rho, E),
        "mu": _cell_means(None if mats is None else mats.mu, E),
        "generation": mesh.level.astype(float),
    }
    quads = sp_.cell_nodes[:, [0, 1, 3, 2]]
    lines = ["# vtk DataFile Version 3.0", f"levelflow t={state.t:.17g}", "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in X]
    lines.append(f"CELLS {E} {5 * E}")
    lines += ["4 " + " ".join(str(int(k)) for k in q) for q in quads]
    lines.append(f"CELL_TYPES {E}")
    lines += ["9"] * E
    lines.append(f"POINT_DATA {n}")
    lines += ["SCALARS phi double 1", "LOOKUP_TABLE default"] + [_fmt(v) for v in phi.values]
    lines += ["VECTORS velocity double"] + [f"{_fmt(a)} {_fmt(b)} 0" for a, b in U]
    lines += ["SCALARS pressure double 1", "LOOKUP_TABLE default"] + [_fmt(v) for v in P]
    lines.append(f"CELL_DATA {E}")
    for name, vals in cell.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"] + [_fmt(v) for v in vals]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_vtk(path) -> dict:
    """Minimal reader for files written by :func:`write_vtk` (used by tests)."""
    tok = Path(path).read_text().split("\n")
    out: dict = {"point_data": {}, "cell_data": {}}
    i = 0
    section = None
    while i < len(tok):
        line = tok[i].strip()
        parts = line.split()
        if not parts:
            i += 1
            continue
        if parts[0] == "POINTS":
            n = int(parts[1])
            out["points"] = np.array([[float(v) for v in tok[i + 1 + k].split()] for k in range(n)])
            i += n + 1
        elif parts[0] == "CELLS":
            m = int(parts[1])
            out["cells"] = np.array([[int(v) for v in tok[i + 1 + k].split()[1:]] for k in range(m)])
            i += m + 1
        elif parts[0] == "CELL_TYPES":
            m = int(parts[1])
            out["cell_types"] = np.array([int(tok[i + 1 + k]) for k in range(m)])
            i += m + 1
        elif parts[0] in ("POINT_DATA", "CELL_DATA"):
            section = ("point_data", int(parts[1])) if parts[0] == "POINT_DATA" else ("cell_data", int(parts[1]))
            i += 1
        elif parts[0] == "SCALARS":
            key, m = section
            out[key][parts[1]] = np.array([float(tok[i + 2 + k]) for k in range(m)])
            i += m + 2
        elif parts[0] == "VECTORS":
            key, m = section
            out[key][parts[1]] = np.array([[float(v) for v in tok[i + 1 + k].split()] for k in range(m)])
            i += m + 1
        else:
            i += 1
    return out
