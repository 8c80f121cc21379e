"""Scenario time loop, benchmark metrics and the level-set convergence study."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .coupling import SimulationState, advance, choose_dt
from .fem import Field, SolverError, interpolate, ref_quadrature, tensor_basis
from .nsolver import min_side
from .output import MetricsRow, write_csv, write_vtk
from .problems import Scenario, build_scenario

SUB = 4      # subcells per direction in interface cells


def _subcell_triangles():
    """Reference triangles (T, 3, 2): two per subcell of a SUB x SUB split."""
    k = np.arange(SUB) / SUB
    x0, y0 = (a.ravel() for a in np.meshgrid(k, k, indexing="xy"))
    d = 1.0 / SUB
    a = np.column_stack([x0, y0])
    b = np.column_stack([x0 + d, y0])
    c = np.column_stack([x0, y0 + d])
    e = np.column_stack([x0 + d, y0 + d])
    return np.concatenate([np.stack([a, b, e], 1), np.stack([a, e, c], 1)])


def _positive_parts(v, p):
    """Area and centroid of {v > 0} on triangles with linear data.

    ``v`` (..., 3) vertex values, ``p`` (..., 3, 2) vertices.  Returns up to
    two signed pieces (area, centroid) whose sum is the positive part; both
    depend continuously on ``v``.
    """
    pos = v > 0
    npos = pos.sum(axis=-1)
    # the vertex on its own side of the zero line
    k = np.where(npos == 1, np.argmax(pos, axis=-1), np.argmin(pos, axis=-1))
    j, l = (k + 1) % 3, (k + 2) % 3
    take = lambda a, i: np.take_along_axis(a, i[..., None], axis=-1)[..., 0]
    vk, vj, vl = take(v, k), take(v, j), take(v, l)
    pk = np.take_along_axis(p, k[..., None, None], axis=-2)[..., 0, :]
    pj = np.take_along_axis(p, j[..., None, None], axis=-2)[..., 0, :]
    pl = np.take_along_axis(p, l[..., None, None], axis=-2)[..., 0, :]
    cut = (npos == 1) | (npos == 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        sj = np.where(cut, vk / (vk - vj), 0.0)
        sl = np.where(cut, vk / (vk - vl), 0.0)
    qj = pk + sj[..., None] * (pj - pk)
    ql = pk + sl[..., None] * (pl - pk)

    def area(a, b, c):
        return 0.5 * np.abs((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                            - (c[..., 0] - a[..., 0]) * (b[..., 1] - a[..., 1]))

    full_a = area(p[..., 0, :], p[..., 1, :], p[..., 2, :])
    full_c = p.mean(axis=-2)
    sub_a = area(pk, qj, ql)
    sub_c = (pk + qj + ql) / 3.0
    a1 = np.where(npos >= 2, full_a, np.where(npos == 1, sub_a, 0.0))
    a2 = np.where(npos == 2, -sub_a, 0.0)
    c1 = np.where((npos >= 2)[..., None], full_c, sub_c)
    return (a1, c1), (a2, sub_c)


def compute_metrics(state: SimulationState, phase: str = "plus", velocity=None) -> MetricsRow:
    """Area, center of mass and mean vertical velocity of one phase.

    Cells whose corner values share a strict sign lie entirely in one phase
    (Q1 extremes sit at the corners).  The others are split into 4x4
    subcells of two triangles each, and the sharp indicator of the linear
    interpolant is integrated exactly on every triangle, so the metrics vary
    continuously with phi.  ``velocity(x, y) -> (ux, uy)`` replaces the NS
    field for kinematic runs.
    """
    sgn = 1.0 if phase == "plus" else -1.0
    phi = state.ls.phi
    sp_ = phi.space
    mesh = state.mesh
    corner = sgn * phi.values[sp_.cell_nodes]                       # (E, 4)
    inside = (corner > 0).all(axis=1)
    band = ~inside & (corner > 0).any(axis=1)

    vel_q2 = state.ns.U_n if state.ns is not None else None

    def uy_at(cells, xi, eta):
        # xi, eta broadcast against cells[:, None]
        xi, eta = np.broadcast_arrays(xi, eta, cells[:, None].astype(float))[:2]
        if vel_q2 is not None:
            vs = vel_q2.space
            b2 = tensor_basis(2, xi.ravel(), eta.ravel())[0].reshape(xi.shape + (-1,))
            vals = vel_q2.values[vs.cell_nodes[cells] + vs.n_nodes]
            return np.einsum("cpa,ca->cp", b2, vals)
        if velocity is not None:
            x = mesh.xlo[cells, None] + mesh.hx[cells, None] * xi
            y = mesh.ylo[cells, None] + mesh.hy[cells, None] * eta
            return np.broadcast_to(np.asarray(velocity(x, y)[1], dtype=float), x.shape)
        return np.zeros(xi.shape)

    area = sx = sy = su = 0.0
    q = ref_quadrature(1, 3)
    xi, eta, w = q.points[:, 0], q.points[:, 1], q.weights
    c = np.nonzero(inside)[0]
    if c.size:
        jac = mesh.hx[c] * mesh.hy[c]
        area += jac.sum()
        sx += (jac * (mesh.xlo[c] + 0.5 * mesh.hx[c])).sum()
        sy += (jac * (mesh.ylo[c] + 0.5 * mesh.hy[c])).sum()
        su += ((uy_at(c, xi[None], eta[None]) @ w) * jac).sum()
    c = np.nonzero(band)[0]
    if c.size:
        # bilinear phi sampled at the subcell corners, linear on each triangle
        tri = _subcell_triangles()                                   # (T, 3, 2)
        b1 = tensor_basis(1, tri[..., 0].ravel(), tri[..., 1].ravel())[0]
        v = ((sgn * phi.values[sp_.cell_nodes[c]]) @ b1.T).reshape(c.size, *tri.shape[:2])
        pts = np.broadcast_to(tri, (c.size,) + tri.shape)
        jac = mesh.hx[c] * mesh.hy[c]
        for a, cen in _positive_parts(v, pts):
            wa = a * jac[:, None]
            x = mesh.xlo[c, None] + mesh.hx[c, None] * cen[..., 0]
            y = mesh.ylo[c, None] + mesh.hy[c, None] * cen[..., 1]
            area += wa.sum()
            sx += (wa * x).sum()
            sy += (wa * y).sum()
            su += (wa * uy_at(c, cen[..., 0], cen[..., 1])).sum()

    empty = area <= 0.0
    mats = state.materials
    return MetricsRow(
        step=state.step, t=state.t, dt=state.dt_history[-1] if state.dt_history else 0.0,
        x_c=0.0 if empty else sx / area, y_c=0.0 if empty else sy / area, u_c=0.0 if empty else su / area,
        area=float(area), empty=int(empty), div_norm=float(state.div_norm), min_h=min_side(mesh),
        n_cells=mesh.n_cells, phi_max=float(phi.values.max()), phi_min=float(phi.values.min()),
        rho_min=float(mats.rho.min()) if mats is not None else math.nan,
        rho_max=float(mats.rho.max()) if mats is not None else math.nan,
        mu_min=float(mats.mu.min()) if mats is not None else math.nan,
        mu_max=float(mats.mu.max()) if mats is not None else math.nan,
        dt_cfl_ls=float(state.dt_cfl_ls), dt_cfl_ns=float(state.dt_cfl_ns),
    )


# -------------------------------------------------------------------- run

@dataclass
class RunResult:
    status: int
    rows: list
    state: SimulationState | None
    csv_path: Path | None = None
    snapshots: list = field(default_factory=list)
    message: str = ""


def _kinematic_velocity(scenario: Scenario, t: float):
    f = scenario.problem.prescribed
    if f is None:
        return None
    return lambda x, y: f(x, y, t)


def run(cfg: ScenarioConfig, out_dir=None, max_steps: int | None = None, write_files: bool = True,
        callback=None) -> RunResult:
    """Time loop until t >= t_final (or ``max_steps``); returns rows and status.

    Status 0 on success and 3 on a solver failure, in which case the last
    good state is written as a snapshot.
    """
    scenario = build_scenario(cfg)
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    phase = cfg.output_phase
    state = scenario.initial_state()
    rows = [compute_metrics(state, phase, _kinematic_velocity(scenario, state.t))]
    snaps: list = []
    if write_files and cfg.output_every > 0:
        snaps.append(write_vtk(state, out / f"{cfg.name}_{0:06d}.vtk"))
    status, msg = 0, ""
    tol = 1e-12 * cfg.t_final
    while state.t < cfg.t_final - tol and (max_steps is None or state.step < max_steps):
        try:
            dt = choose_dt(state, scenario.problem)
            dt = min(dt, cfg.t_final - state.t)
            new = advance(state, scenario.problem, dt)
            if not np.all(np.isfinite(new.ls.phi.values)) or (
                    new.ns is not None and not np.all(np.isfinite(new.ns.U_n.values))):
                raise SolverError("non-finite values in the solution")
        except SolverError as exc:
            status, msg = 3, f"solver failure at step {state.step + 1}, t={state.t:.6g}: {exc}"
            if write_files:
                snaps.append(write_vtk(state, out / f"{cfg.name}_lastgood.vtk"))
            break
        # the limits that were actually applied to this step
        new.dt_cfl_ls, new.dt_cfl_ns = state.dt_cfl_ls, state.dt_cfl_ns
        state = new
        rows.append(compute_metrics(state, phase, _kinematic_velocity(scenario, state.t)))
        if callback is not None:
            callback(state, rows[-1])
        if write_files and cfg.output_every > 0 and state.step % cfg.output_every == 0:
            snaps.append(write_vtk(state, out / f"{cfg.name}_{state.step:06d}.vtk"))
    csv_path = write_csv(rows, out / f"{cfg.name}.csv") if write_files else None
    return RunResult(status, rows, state, csv_path, snaps, msg)


# ------------------------------------------------------ convergence study

@dataclass
class ConvergenceRow:
    dt: float
    h: float
    error: float
    rate: float | None


@dataclass
class ConvergenceTable:
    rows: list

    @property
    def errors(self) -> list:
        return [r.error for r in self.rows]

    @property
    def rates(self) -> list:
        return [r.rate for r in self.rows[1:]]

    def format(self) -> str:
        lines = [f"{'dt':>10} {'h':>12} {'L2 error':>12} {'rate':>6}"]
        for r in self.rows:
            rate = "-" if r.rate is None else f"{r.rate:.2f}"
            lines.append(f"{r.dt:>10.4g} {r.h:>12.6g} {r.error:>12.4e} {rate:>6}")
        return "\n".join(lines)


def observed_rates(errors) -> list:
    return [math.log2(a / b) for a, b in zip(errors[:-1], errors[1:])]


def levelset_l2_error(phi: Field, exact) -> float:
    """L2 norm of phi - I_h(exact) with I_h the nodal interpolant."""
    diff = Field(phi.space, phi.values - interpolate(phi.space, exact).values)
    q = ref_quadrature(1, 3)
    return float(np.sqrt((diff.at_qp(q) ** 2 * phi.space.jxw(q)).sum()))


def convergence_study(cfg: ScenarioConfig, ladder) -> ConvergenceTable:
    """Run ``cfg`` once per ``(dt, h0)`` rung and compare with the initial data.

    The flow must be time periodic with period ``t_final`` so the exact
    solution at the final time is the (filtered) initial level set.
    """
    rows = []
    for dt, h0 in ladder:
        c = replace(cfg, dt_fixed=float(dt), h0=float(h0), numerical=replace(cfg.numerical, r_max=0))
        res = run(c, write_files=False)
        if res.status != 0:
            raise SolverError(res.message)
        st = res.state
        scen = build_scenario(c)
        err = levelset_l2_error(st.ls.phi, lambda x, y: scen.phi0(x, y, st.ls.beta))
        rate = math.log2(rows[-1].error / err) if rows else None
        rows.append(ConvergenceRow(float(dt), float(h0), err, rate))
    return ConvergenceTable(rows)


def default_ladder(n0: int = 32, dt0: float = 1e-2, rungs: int = 4, length: float = 1.0):
    """Paired halving of time step and cell size."""
    return [(dt0 / 2 ** k, length / (n0 * 2 ** k)) for k in range(rungs)]
