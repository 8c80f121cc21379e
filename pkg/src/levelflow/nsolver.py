"""Variable-step BDF2 incremental pressure correction in rotational form
on Taylor-Hood Q2/Q1 elements.

One step is three solves:

1. velocity prediction with an explicit (extrapolated) advection field,
   grad-div stabilization and an optional implicit surface-tension
   stiffness;
2. pressure increment ``Psi`` from a Poisson problem driven by div U;
3. pressure update ``P = P_n + Psi - mu_min * div U`` (L2 projection).

Coefficients rho, mu (and the surface-tension data) are supplied at the
3x3 Gauss points of each cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .config import NumericalParams
from .fem import (DirectSolver, Field, FESpace, SolverError, apply_dirichlet, laplace_matrix, mass_matrix,
                  ref_quadrature, scatter_vector, solve_spd, tensor_basis)
from .fem.assembly import pattern
from .mesh import QuadMesh

N1D = 3
SIDES = ("left", "right", "bottom", "top")
BACKFLOW = 0.5   # weight of the open-boundary backflow term


# ------------------------------------------------------------- BDF2 weights

@dataclass(frozen=True)
class StepCoefficients:
    eta: float
    a0: float
    a1: float
    a2: float

    def extrapolate(self, u_n: np.ndarray, u_nm1: np.ndarray) -> np.ndarray:
        """(U^n)* = U^n + eta (U^n - U^{n-1})."""
        return u_n + self.eta * (u_n - u_nm1)


def bdf2_coeffs(dt_np1: float, dt_n: float | None) -> StepCoefficients:
    """Variable-step BDF2 weights; ``dt_n=None`` gives backward Euler."""
    if not dt_np1 > 0 or (dt_n is not None and not dt_n > 0):
        raise ValueError("time steps must be positive")
    eta = 0.0 if dt_n is None else dt_np1 / dt_n
    a0 = (1.0 + 2.0 * eta) / ((1.0 + eta) * dt_np1)
    a1 = -(1.0 + eta) / dt_np1
    a2 = eta * eta / ((1.0 + eta) * dt_np1)
    return StepCoefficients(eta, a0, a1, a2)


# --------------------------------------------------------- boundary data

@dataclass(frozen=True)
class Segment:
    """A boundary condition on (part of) one side of the box.

    ``kind`` is ``dirichlet`` (velocity = ``value(x, y, t)``, default 0),
    ``slip`` (zero normal velocity) or ``open`` (traction free).
    ``window`` restricts the segment to an open coordinate interval along
    the side.
    """

    side: str
    kind: str
    window: tuple[float, float] | None = None
    value: Callable | None = None

    def select(self, coords: np.ndarray) -> np.ndarray:
        """Nodes strictly inside the window (all nodes without one)."""
        if self.window is None:
            return np.ones(len(coords), dtype=bool)
        s = coords[:, 1] if self.side in ("left", "right") else coords[:, 0]
        a, b = self.window
        tol = 1e-12 * max(1.0, abs(a), abs(b))
        return (s > a + tol) & (s < b - tol)


_PRIORITY = {"open": 0, "slip": 1, "dirichlet": 2}


class FlowBoundary:
    """Resolves boundary segments into constrained velocity dofs.

    On nodes claimed by several segments (corners, window ends) the
    strongest condition wins: dirichlet > slip > open.  Slip on two
    adjacent sides fixes both components at the shared corner.
    """

    def __init__(self, segments: Sequence[Segment]):
        for s in segments:
            if s.side not in SIDES or s.kind not in _PRIORITY:
                raise ValueError(f"bad boundary segment {s}")
        self.segments = list(segments)

    @classmethod
    def no_slip(cls) -> "FlowBoundary":
        return cls([Segment(s, "dirichlet") for s in SIDES])

    def _node_kinds(self, space: FESpace):
        """Per node: priority code (-1 interior), owning segment and slip flags."""
        code = np.full(space.n_nodes, -1, dtype=np.int64)
        owner = np.full(space.n_nodes, -1, dtype=np.int64)
        slip_x = np.zeros(space.n_nodes, dtype=bool)
        slip_y = np.zeros(space.n_nodes, dtype=bool)
        for k, seg in enumerate(self.segments):
            nodes = space.boundary_nodes(seg.side)
            nodes = nodes[seg.select(space.node_coords[nodes])]
            pr = _PRIORITY[seg.kind]
            if seg.kind == "slip":
                (slip_x if seg.side in ("left", "right") else slip_y)[nodes] = True
            take = pr >= code[nodes]
            code[nodes[take]] = pr
            owner[nodes[take]] = k
        return code, owner, slip_x, slip_y

    def velocity_dirichlet(self, space: FESpace, t: float):
        """(free dof indices, values) of all prescribed velocity components."""
        code, owner, slip_x, slip_y = self._node_kinds(space)
        n_free = space.n_free
        dofs, vals = [], []
        dn = np.nonzero(code == _PRIORITY["dirichlet"])[0]
        if dn.size:
            ux = np.zeros(dn.size)
            uy = np.zeros(dn.size)
            for k in np.unique(owner[dn]):
                seg = self.segments[k]
                sel = owner[dn] == k
                if seg.value is not None:
                    x, y = space.node_coords[dn[sel], 0], space.node_coords[dn[sel], 1]
                    vx, vy = seg.value(x, y, t)
                    ux[sel] = vx
                    uy[sel] = vy
            fi = space.free_index[dn]
            dofs += [fi, fi + n_free]
            vals += [ux, uy]
        rest = code != _PRIORITY["dirichlet"]
        for comp, mask in ((0, slip_x), (1, slip_y)):
            sn = np.nonzero(mask & rest)[0]
            if sn.size:
                dofs.append(space.free_index[sn] + comp * n_free)
                vals.append(np.zeros(sn.size))
        if not dofs:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        d = np.concatenate(dofs)
        v = np.concatenate(vals)
        d, idx = np.unique(d, return_index=True)
        return d, v[idx]

    def _code_at(self, side: str, pts: np.ndarray) -> np.ndarray:
        code = np.full(len(pts), -1, dtype=np.int64)
        for seg in self.segments:
            if seg.side == side:
                sel = seg.select(pts)
                code[sel] = np.maximum(code[sel], _PRIORITY[seg.kind])
        return code

    def open_faces(self, mesh: QuadMesh) -> dict:
        """Per side, the boundary cells whose face on that side is open.

        A face is open when the condition at its midpoint is.
        """
        x0, x1, y0, y1 = mesh.extents
        tol = 1e-9 * max(x1 - x0, y1 - y0)
        xlo, ylo = mesh.xlo, mesh.ylo
        xhi, yhi = xlo + mesh.hx, ylo + mesh.hy
        xm, ym = xlo + 0.5 * mesh.hx, ylo + 0.5 * mesh.hy
        probes = {
            "left": (np.abs(xlo - x0) < tol, np.stack([xlo, ym], 1)),
            "right": (np.abs(xhi - x1) < tol, np.stack([xhi, ym], 1)),
            "bottom": (np.abs(ylo - y0) < tol, np.stack([xm, ylo], 1)),
            "top": (np.abs(yhi - y1) < tol, np.stack([xm, yhi], 1)),
        }
        out = {}
        for side, (on, mid) in probes.items():
            cells = np.nonzero(on)[0]
            out[side] = cells[self._code_at(side, mid[cells]) == _PRIORITY["open"]]
        return out

    def open_nodes(self, space: FESpace) -> np.ndarray:
        """Nodes on the closure of the traction-free boundary.

        Both end nodes of every open face are returned, including corners
        and window ends that carry a velocity condition.  Leaving such a
        node out of the pressure increment's Dirichlet set makes the
        splitting unstable.
        """
        k = space.degree
        # local corners in lexicographic order: (0,0), (1,0), (0,1), (1,1)
        corners = space.cell_nodes[:, [0, k, (k + 1) * k, (k + 1) ** 2 - 1]]
        loc = {"left": (0, 2), "right": (1, 3), "bottom": (0, 1), "top": (2, 3)}
        out = [corners[cells][:, loc[side]].ravel() for side, cells in self.open_faces(space.mesh).items()]
        return np.unique(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)

    @property
    def has_open(self) -> bool:
        return any(s.kind == "open" for s in self.segments)


# ----------------------------------------------------------------- state

@dataclass
class NSState:
    U_n: Field
    U_nm1: Field
    P_n: Field
    Psi_n: Field
    Psi_nm1: Field
    dt_n: float | None = None   # previous step; None before the first step

    @classmethod
    def at_rest(cls, vspace: FESpace, pspace: FESpace) -> "NSState":
        z = Field(vspace)
        q = Field(pspace)
        return cls(z, z.copy(), q, q.copy(), q.copy(), None)


@dataclass
class SurfaceTensionData:
    """Per quadrature point data of the regularized interface measure.

    ``delta``: (E, nq) Dirac approximation, ``normal``: (E, nq, 2) unit
    vector grad(phi)/|grad(phi)| (zero where undefined), ``sigma``
    surface tension coefficient.  Both arrays live on the ``n1d`` x ``n1d``
    Gauss rule of each cell.
    """

    sigma: float
    delta: np.ndarray
    normal: np.ndarray
    n1d: int = N1D


@dataclass
class StepDiagnostics:
    div_norm: float
    rho_min: float
    mu_min: float
    dt: float


# ------------------------------------------------------------ the solver

class NSDiscretization:
    """Spaces and mesh-fixed operators for one mesh."""

    def __init__(self, mesh: QuadMesh, boundary: FlowBoundary, params: NumericalParams):
        self.mesh = mesh
        self.boundary = boundary
        self.params = params
        self.vspace = FESpace(mesh, 2, 2)
        self.pspace = FESpace(mesh, 1, 1)
        self.quad_v = ref_quadrature(2, N1D)
        self.quad_p = ref_quadrature(1, N1D)
        self._cache: dict = {}

    # mesh-fixed operators -------------------------------------------------
    def div_matrix(self) -> sp.csr_matrix:
        """B[q, u] = int Q div(U), condensed (Q1 free x Q2-vector free)."""
        if "B" not in self._cache:
            vs, ps = self.vspace, self.pspace
            G = vs.grad_basis(self.quad_v)                    # (E, nq, 9, 2)
            jxw = vs.jxw(self.quad_v)
            wq = jxw[:, :, None] * self.quad_p.phi[None]      # (E, nq, 4)
            bx = np.einsum("eqa,eqb->eab", wq, G[..., 0], optimize=True)
            by = np.einsum("eqa,eqb->eab", wq, G[..., 1], optimize=True)
            local = np.concatenate([bx, by], axis=2)          # (E, 4, 18)
            B = pattern(ps, vs).matrix(local)
            self._cache["B"] = (ps.C.T @ B @ vs.Cfull).tocsr()
        return self._cache["B"]

    def pressure_mass(self) -> tuple[sp.csr_matrix, DirectSolver]:
        if "Mp" not in self._cache:
            M = mass_matrix(self.pspace)
            self._cache["Mp"] = (M, DirectSolver(M, singular=False))
        return self._cache["Mp"]

    def pressure_laplace(self):
        """(matrix, factorization, Dirichlet dofs) of the increment problem."""
        if "Kp" not in self._cache:
            ps = self.pspace
            K = laplace_matrix(ps)
            dofs = ps.free_index[self.boundary.open_nodes(ps)]
            dofs = dofs[dofs >= 0]
            if dofs.size:
                K, _ = apply_dirichlet(K, np.zeros(K.shape[0]), dofs, np.zeros(dofs.size))
                solver = DirectSolver(K, singular=False)
            else:
                solver = DirectSolver(K, singular=True)
            self._cache["Kp"] = (K, solver, dofs)
        return self._cache["Kp"]

    def open_edges(self) -> list:
        """[(cells, basis (nqe, 9), length weights (n, nqe), outward normal)] per open side."""
        if "edges" not in self._cache:
            g, w = np.polynomial.legendre.leggauss(N1D)
            g, w = 0.5 * (g + 1.0), 0.5 * w
            ref = {"left": (np.zeros_like(g), g, (-1.0, 0.0)), "right": (np.ones_like(g), g, (1.0, 0.0)),
                   "bottom": (g, np.zeros_like(g), (0.0, -1.0)), "top": (g, np.ones_like(g), (0.0, 1.0))}
            m = self.mesh
            out = []
            for side, cells in self.boundary.open_faces(m).items():
                if cells.size:
                    xi, eta, nrm = ref[side]
                    length = m.hy[cells] if side in ("left", "right") else m.hx[cells]
                    out.append((cells, tensor_basis(2, xi, eta)[0], length[:, None] * w[None], np.array(nrm)))
            self._cache["edges"] = out
        return self._cache["edges"]

    # per-step helpers ------------------------------------------------------
    def velocity_at_qp(self, U: Field):
        vs = self.vspace
        n = vs.n_nodes
        loc = U.values[vs.cell_nodes]
        locy = U.values[vs.cell_nodes + n]
        return np.stack([loc @ self.quad_v.phi.T, locy @ self.quad_v.phi.T], axis=-1)

    def velocity_grad_at_qp(self, U: Field):
        """(E, nq, 2, 2) with [..., c, d] = d U_c / d x_d."""
        return U.grad_at_qp(self.quad_v)

    def pressure_at_qp(self, values: np.ndarray):
        return values[self.pspace.cell_nodes] @ self.quad_p.phi.T


def cfl_dt_ns(U_n: Field, mesh: QuadMesh, c_cfl: float, dt_max: float = math.inf) -> float:
    """C_CFL * (min h / 2) / ||U^n||_inf, or ``dt_max`` for U = 0.

    ``min h / 2`` is the smallest spacing of the Q2 nodes.
    """
    umax = U_n.max_abs()
    if umax == 0:
        return dt_max
    return min(dt_max, c_cfl * 0.5 * min_side(mesh) / umax)


def min_side(mesh: QuadMesh) -> float:
    return float(min(mesh.hx.min(), mesh.hy.min()))


def symmetric_strain_norm(grad: np.ndarray) -> np.ndarray:
    """Frobenius norm of the symmetric gradient, grad[..., c, d] = dU_c/dx_d."""
    s01 = 0.5 * (grad[..., 0, 1] + grad[..., 1, 0])
    return np.sqrt(grad[..., 0, 0] ** 2 + grad[..., 1, 1] ** 2 + 2.0 * s01 ** 2)


def _bmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_q a[e,q,i] b[e,q,j] -> (e,i,j)."""
    return np.matmul(a.transpose(0, 2, 1), b)


def _tension_local(vs: FESpace, tension: SurfaceTensionData, dt: float):
    """Local blocks of both surface-tension terms.

    Matrix: dt sigma int delta (grad(N_a) P).(grad(N_b) P), equal for both
    components.  Right-hand side per component c: sigma int delta (P grad N_a)_c.
    """
    q = ref_quadrature(2, tension.n1d)
    G = vs.grad_basis(q)
    Gx, Gy = G[..., 0], G[..., 1]
    w = tension.sigma * tension.delta * vs.jxw(q)
    nx, ny = tension.normal[..., 0], tension.normal[..., 1]
    Gn = Gx * nx[..., None] + Gy * ny[..., None]
    ws = (dt * w)[..., None]
    mat = _bmm(Gx * ws, Gx) + _bmm(Gy * ws, Gy) - _bmm(Gn * ws, Gn)
    rhs = [np.einsum("eq,eqa->ea", w, Gx - nx[..., None] * Gn),
           np.einsum("eq,eqa->ea", w, Gy - ny[..., None] * Gn)]
    return mat, rhs


def graddiv_coefficient(disc: NSDiscretization, U_star: Field, rho: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """C_stab (mu + rho ||h_K U*||_inf,K) at the quadrature points."""
    speed = np.sqrt((disc.velocity_at_qp(U_star) ** 2).sum(-1)).max(axis=1)
    return disc.params.c_stab * (mu + rho * (disc.mesh.diameters * speed)[:, None])


def _graddiv_local(G: np.ndarray, wt: np.ndarray) -> np.ndarray:
    """Local (E, 18, 18) blocks of int tau div(U) div(V)."""
    E = G.shape[0]
    dv = np.concatenate([G[..., 0], G[..., 1]], axis=2)      # (E, nq, 18)
    return _bmm(dv * wt[..., None], dv).reshape(E, 18, 18)


def graddiv_matrix(disc: NSDiscretization, U_star: Field, rho: np.ndarray, mu: np.ndarray) -> sp.csr_matrix:
    """The assembled (condensed) grad-div stabilization form."""
    vs = disc.vspace
    wt = graddiv_coefficient(disc, U_star, rho, mu) * vs.jxw(disc.quad_v)
    A = pattern(vs, vs).matrix(_graddiv_local(vs.grad_basis(disc.quad_v), wt))
    return (vs.Cfull.T @ A @ vs.Cfull).tocsr()


def velocity_prediction(disc: NSDiscretization, state: NSState, coeffs: StepCoefficients, dt: float,
                        rho: np.ndarray, mu: np.ndarray, t_np1: float,
                        gravity=(0.0, 0.0), body_force: Callable | None = None,
                        tension: SurfaceTensionData | None = None,
                        U_star: Field | None = None, advect: bool = True) -> Field:
    """Solve the momentum predictor for U^{n+1}.

    ``rho``/``mu`` are (E, nq) values at the 3x3 Gauss points.  The advecting
    field defaults to the BDF2 extrapolation of U^n, U^{n-1}.  ``advect=False``
    drops the convective term (unsteady Stokes).
    """
    vs, params = disc.vspace, disc.params
    q = disc.quad_v
    N = q.phi                                     # (nq, 9)
    G = vs.grad_basis(q)                          # (E, nq, 9, 2)
    jxw = vs.jxw(q)
    E, nq = jxw.shape
    n = vs.n_nodes

    if U_star is None:
        U_star = Field(vs, coeffs.extrapolate(state.U_n.values, state.U_nm1.values))
    ustar = disc.velocity_at_qp(U_star)           # (E, nq, 2)
    un = disc.velocity_at_qp(state.U_n)
    unm1 = disc.velocity_at_qp(state.U_nm1)
    gun = disc.velocity_grad_at_qp(state.U_n)     # (E, nq, 2, 2)

    tau = graddiv_coefficient(disc, U_star, rho, mu)

    # ---------------------------------------------------------- matrix
    wm = rho * coeffs.a0 * jxw
    wk = mu * jxw
    wt = tau * jxw
    Nw = N[None, :, :] * wm[:, :, None]
    D = np.matmul(Nw.transpose(0, 2, 1), np.broadcast_to(N, (E, nq, N.shape[1])))
    Gx, Gy = G[..., 0], G[..., 1]
    D += _bmm(Gx * wk[..., None], Gx) + _bmm(Gy * wk[..., None], Gy)
    if tension is not None and tension.sigma > 0:
        st_mat, st_rhs = _tension_local(vs, tension, dt)
        D += st_mat
    Gc = (Gx, Gy)
    local = np.empty((E, 18, 18))
    for c in range(2):
        for d in range(2):
            blk = _bmm(Gc[d] * wk[..., None], Gc[c])
            if c == d:
                blk = blk + D
            local[:, 9 * c:9 * c + 9, 9 * d:9 * d + 9] = blk
    local += _graddiv_local(G, wt)
    if advect:
        _add_backflow(disc, local, U_star, rho)
    A = pattern(vs, vs).matrix(local)
    A = (vs.Cfull.T @ A @ vs.Cfull).tocsr()

    # ------------------------------------------------------------ rhs
    ptil = disc.pressure_at_qp(state.P_n.values + (4.0 / 3.0) * state.Psi_n.values
                               - (1.0 / 3.0) * state.Psi_nm1.values)
    adv = np.einsum("eqd,eqcd->eqc", ustar, gun)
    src = -rho[..., None] * (coeffs.a1 * un + coeffs.a2 * unm1)
    if advect:
        src = src - rho[..., None] * adv
    src = src + rho[..., None] * np.asarray(gravity, dtype=float)
    if body_force is not None:
        xq = vs.qp_coords(q)
        fx, fy = body_force(xq[..., 0], xq[..., 1], t_np1)
        src = src + np.stack([np.broadcast_to(fx, (E, nq)), np.broadcast_to(fy, (E, nq))], axis=-1)
    rhs_local = np.empty((E, 18))
    for c in range(2):
        r = (src[..., c] * jxw) @ N + np.einsum("eq,eqa->ea", ptil * jxw, Gc[c])
        if tension is not None and tension.sigma > 0:
            r -= st_rhs[c]
        rhs_local[:, 9 * c:9 * c + 9] = r
    b = vs.Cfull.T @ scatter_vector(vs, rhs_local)

    dofs, vals = disc.boundary.velocity_dirichlet(vs, t_np1)
    A, b = apply_dirichlet(A, b, dofs, vals)
    x = _solve_momentum(A, b, params)
    return Field(vs, vs.expand(x))


def _add_backflow(disc: NSDiscretization, local: np.ndarray, U_star: Field, rho: np.ndarray):
    """Implicit BACKFLOW * rho * |min(U*.n, 0)| U.V on open faces.

    Explicit advection carries kinetic energy into the domain wherever
    fluid re-enters through a traction-free boundary; this term removes
    that influx and vanishes on outflow.  rho is the cell maximum.
    """
    vs = disc.vspace
    n = vs.n_nodes
    for cells, Ne, jw, nrm in disc.open_edges():
        nodes = vs.cell_nodes[cells]
        un = (U_star.values[nodes] @ Ne.T) * nrm[0] + (U_star.values[nodes + n] @ Ne.T) * nrm[1]
        wgt = BACKFLOW * rho[cells].max(axis=1)[:, None] * np.maximum(-un, 0.0) * jw
        if not wgt.any():
            continue
        blk = np.einsum("eq,qa,qb->eab", wgt, Ne, Ne, optimize=True)
        local[cells, :9, :9] += blk
        local[cells, 9:, 9:] += blk


def _solve_momentum(A, b, params: NumericalParams) -> np.ndarray:
    try:
        return solve_spd(A, b, tol=params.lin_solver_rel_tol, max_iter=params.lin_solver_max_iter)
    except SolverError:
        # CG stagnation on a badly scaled system: fall back to a direct solve
        return DirectSolver(A, singular=False).solve(b)


def pressure_correction(disc: NSDiscretization, U_np1: Field, rho_min: float, dt: float) -> Field:
    """Psi^{n+1}: Laplace problem driven by -(3 rho_min / 2 dt) div U^{n+1}."""
    if not rho_min > 0:
        raise ValueError("rho_min must be positive")
    ps, vs = disc.pspace, disc.vspace
    B = disc.div_matrix()
    K, solver, dofs = disc.pressure_laplace()
    rhs = -(3.0 * rho_min / (2.0 * dt)) * (B @ vs.restrict(U_np1.values))
    if dofs.size:
        rhs[dofs] = 0.0
    else:
        # pure Neumann: remove the mean of the source as a function, not of the vector
        Mp, _ = disc.pressure_mass()
        m1 = Mp @ np.ones(ps.n_free)
        rhs = rhs - (rhs.sum() / m1.sum()) * m1
    x = solver.solve(rhs)
    psi = Field(ps, ps.expand(x))
    if not dofs.size:
        # fix the additive constant by a zero integral mean
        Mp, _ = disc.pressure_mass()
        ones = np.ones(ps.n_free)
        mean = (ones @ (Mp @ x)) / (ones @ (Mp @ ones))
        psi = Field(ps, ps.expand(x - mean))
    return psi


def pressure_update(disc: NSDiscretization, P_n: Field, Psi_np1: Field, U_np1: Field, mu_min: float) -> Field:
    """P^{n+1} = P^n + Psi^{n+1} - mu_min * Pi(div U^{n+1}) with Pi the L2 projection."""
    ps, vs = disc.pspace, disc.vspace
    Mp, solver = disc.pressure_mass()
    base = ps.restrict(P_n.values) + ps.restrict(Psi_np1.values)
    corr = solver.solve(disc.div_matrix() @ vs.restrict(U_np1.values))
    return Field(ps, ps.expand(base - mu_min * corr))


def hydrostatic_pressure(disc: NSDiscretization, rho: np.ndarray, gravity) -> Field:
    """P with grad P = rho g in the weak sense: int grad P . grad Q = int rho g . grad Q.

    ``rho`` lives on the shared Gauss points of both quadratures.  Open boundaries carry P = 0,
    closed boxes get a zero-mean pressure.
    """
    ps = disc.pspace
    G = ps.grad_basis(disc.quad_p)                              # (E, nq, 4, 2)
    f = rho * ps.jxw(disc.quad_p)
    local = f[..., None] * (gravity[0] * G[..., 0] + gravity[1] * G[..., 1])
    rhs = ps.C.T @ scatter_vector(ps, local.sum(axis=1))
    K, solver, dofs = disc.pressure_laplace()
    Mp, _ = disc.pressure_mass()
    ones = np.ones(ps.n_free)
    if dofs.size:
        rhs[dofs] = 0.0
    else:
        m1 = Mp @ ones
        rhs = rhs - (rhs.sum() / m1.sum()) * m1
    x = solver.solve(rhs)
    if not dofs.size:
        x = x - (ones @ (Mp @ x)) / (ones @ (Mp @ ones))
    return Field(ps, ps.expand(x))


def divergence_norm(disc: NSDiscretization, U: Field) -> float:
    """||div U||_{L2}."""
    g = disc.velocity_grad_at_qp(U)
    div = g[..., 0, 0] + g[..., 1, 1]
    return float(np.sqrt((div ** 2 * disc.vspace.jxw(disc.quad_v)).sum()))


def ns_step(disc: NSDiscretization, state: NSState, dt: float, rho: np.ndarray, mu: np.ndarray,
            t_np1: float, gravity=(0.0, 0.0), body_force: Callable | None = None,
            tension: SurfaceTensionData | None = None,
            rho_min: float | None = None, mu_min: float | None = None,
            advect: bool = True) -> tuple[NSState, StepDiagnostics]:
    """Prediction, correction and update; returns the new state."""
    coeffs = bdf2_coeffs(dt, state.dt_n)
    U = velocity_prediction(disc, state, coeffs, dt, rho, mu, t_np1, gravity, body_force, tension, advect=advect)
    rho_min = float(rho.min()) if rho_min is None else rho_min
    mu_min = float(mu.min()) if mu_min is None else mu_min
    psi = pressure_correction(disc, U, rho_min, dt)
    P = pressure_update(disc, state.P_n, psi, U, mu_min)
    new = NSState(U, state.U_n, P, psi, state.Psi_n, dt)
    return new, StepDiagnostics(divergence_norm(disc, U), rho_min, mu_min, dt)
