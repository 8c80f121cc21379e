"""Q1 level-set transport with entropy-viscosity stabilization and
on-the-fly reinitialization, advanced by a three-stage SSP Runge-Kutta
scheme with a consistent mass matrix.

The transport operator is

    L(phi, u) = -u . grad(phi) + lam * sign_h(phi) * (G(phi) - |grad(phi)|),
    G(z) = 1 - (z / beta)^2,

whose steady profile across a straight interface is beta*tanh(d/beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import NumericalParams
from .fem import DirectSolver, Field, FESpace, mass_matrix, ref_quadrature, scatter_vector, solve_spd

N1D = 3          # Gauss points per direction for all level-set integrals
GRAD_EPS = 1e-12


# ------------------------------------------------------------ pointwise maps

def sign_h(s, beta: float, c_s: float):
    """Thresholded sign: 0 inside the band |s| <= beta*tanh(c_s)."""
    s = np.asarray(s, dtype=float)
    thr = beta * math.tanh(c_s)
    return np.where(s > thr, 1.0, np.where(s < -thr, -1.0, 0.0))


def compute_lambda(u_max: float, c_lambda: float) -> float:
    return c_lambda * u_max


def cutoff_g(z, beta: float):
    z = np.asarray(z, dtype=float)
    return 1.0 - (z / beta) ** 2


# ------------------------------------------------------------- data types

@dataclass
class InflowData:
    """Level-set values prescribed on inflow boundary nodes.

    ``mask(x, y)`` selects boundary nodes on the inflow portion and
    ``value(x, y, t)`` returns the (already filtered) level-set there.
    """

    mask: Callable
    value: Callable

    def nodes(self, space: FESpace) -> np.ndarray:
        on_bdry = np.zeros(space.n_nodes, dtype=bool)
        for side in ("left", "right", "bottom", "top"):
            on_bdry[space.boundary_nodes(side)] = True
        idx = np.nonzero(on_bdry)[0]
        x, y = space.node_coords[idx, 0], space.node_coords[idx, 1]
        return idx[np.asarray(self.mask(x, y), dtype=bool)]

    def apply(self, phi: Field, t: float) -> Field:
        sp_ = phi.space
        idx = self.nodes(sp_)
        if idx.size == 0:
            return phi
        v = phi.values.copy()
        v[idx] = self.value(sp_.node_coords[idx, 0], sp_.node_coords[idx, 1], t)
        return Field(sp_, sp_.distribute(v))


@dataclass
class LevelSetState:
    phi: Field
    beta: float
    lam: float = 0.0
    inflow: InflowData | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


@dataclass
class StabilizationField:
    mu_stab: np.ndarray
    mu_lin: np.ndarray
    mu_ent: np.ndarray


@dataclass
class StepInfo:
    """Viscosities used by stages (ii) and (iii) of the last step."""

    visc_stage2: StabilizationField
    visc_stage3: StabilizationField


# --------------------------------------------------------- velocity inputs

def _vel(u, space: FESpace, n1d: int = N1D):
    """Velocity components (ux, uy) at the level-set quadrature points."""
    quad = ref_quadrature(space.degree, n1d)
    E, nq = space.mesh.n_cells, quad.weights.size
    if isinstance(u, tuple) and len(u) == 2 and np.shape(u[0]) == (E, nq):
        return u
    if u is None:
        z = np.zeros((E, nq))
        return z, z
    if isinstance(u, Field):
        if u.space.mesh is not space.mesh:
            raise ValueError("velocity lives on a different mesh")
        q2 = ref_quadrature(u.space.degree, n1d)
        n = u.space.n_nodes
        nodes = u.space.cell_nodes
        return u.values[nodes] @ q2.phi.T, u.values[nodes + n] @ q2.phi.T
    if callable(u):
        xq = space.qp_coords(quad)
        ux, uy = u(xq[..., 0], xq[..., 1])
        return (np.broadcast_to(np.asarray(ux, dtype=float), (E, nq)),
                np.broadcast_to(np.asarray(uy, dtype=float), (E, nq)))
    arr = np.asarray(u, dtype=float)
    if arr.shape == (2,):
        return np.full((E, nq), arr[0]), np.full((E, nq), arr[1])
    if arr.shape != (E, nq, 2):
        raise ValueError("velocity array has the wrong shape")
    return arr[..., 0], arr[..., 1]


def velocity_at_qp(u, space: FESpace, n1d: int = N1D) -> np.ndarray:
    """Velocity at the level-set quadrature points, shape (E, nq, 2).

    ``u`` may be a vector :class:`Field` on the same mesh, a callable
    ``u(x, y) -> (ux, uy)``, a constant 2-vector or an (E, nq, 2) array.
    """
    ux, uy = _vel(u, space, n1d)
    return np.stack([ux, uy], axis=-1)


# ------------------------------------------------------------ evaluations

class _PhiQP:
    """Value, gradient components and gradient norm of a Q1 field at qp."""

    __slots__ = ("val", "gx", "gy", "gnorm")

    def __init__(self, phi: Field, n1d: int = N1D):
        sp_ = phi.space
        quad = ref_quadrature(sp_.degree, n1d)
        loc = phi.values[sp_.cell_nodes]
        self.val = loc @ quad.phi.T
        self.gx = (loc @ quad.dphi[:, :, 0].T) / sp_.mesh.hx[:, None]
        self.gy = (loc @ quad.dphi[:, :, 1].T) / sp_.mesh.hy[:, None]
        self.gnorm = np.sqrt(self.gx * self.gx + self.gy * self.gy)


def _reinit_term(q: _PhiQP, lam, beta, c_s):
    return lam * sign_h(q.val, beta, c_s) * (cutoff_g(q.val, beta) - q.gnorm)


def _transport(q: _PhiQP, vel, lam, beta, c_s):
    out = -(vel[0] * q.gx + vel[1] * q.gy)
    if lam:
        out += _reinit_term(q, lam, beta, c_s)
    return out


def transport_rhs(phi: Field, u, lam: float, beta: float, c_s: float = 0.5, n1d: int = N1D) -> np.ndarray:
    """L(phi, u) at quadrature points, shape (E, nq)."""
    return _transport(_PhiQP(phi, n1d), _vel(u, phi.space, n1d), lam, beta, c_s)


def _abs_pow(a, p):
    """|a|^p, by repeated squaring when p is a small integer."""
    a = np.abs(a)
    if float(p).is_integer() and 1 <= p <= 64:
        k = int(p)
        out, base = None, a
        while k:
            if k & 1:
                out = base.copy() if out is None else out * base
            k >>= 1
            if k:
                base = base * base
        return out
    return a ** p


def _entropy_parts(q: _PhiQP, qn: _PhiQP, dt_eff, vel, lam, beta, p, c_s):
    """Entropy residual and entropy at qp, both divided by s^p.

    s = max|phi| over both fields; the scaling leaves the viscosity ratio
    unchanged and keeps |phi|^p away from underflow.
    """
    s = max(np.abs(q.val).max(initial=0.0), np.abs(qn.val).max(initial=0.0))
    if s == 0.0:
        z = np.zeros_like(q.val)
        return z, z, 0.0
    a, an = q.val / s, qn.val / s
    ent_m1 = _abs_pow(a, p - 1) if p > 1 else np.ones_like(a)
    ent = ent_m1 * np.abs(a)
    ent_n = _abs_pow(an, p)
    dent = p * ent_m1 * np.sign(a)
    drift = vel[0] * q.gx + vel[1] * q.gy
    if lam:
        drift -= _reinit_term(q, lam, beta, c_s)
    res = (ent - ent_n) / dt_eff + (drift / s) * dent
    return res, ent, s


def entropy_residual(phi_stage: Field, phi_n: Field, dt_eff: float, u, lam: float, beta: float,
                     p: float = 20.0, c_s: float = 0.5) -> np.ndarray:
    """Per-cell max over quadrature points of |R|."""
    res, _, s = _entropy_parts(_PhiQP(phi_stage), _PhiQP(phi_n), dt_eff, _vel(u, phi_stage.space),
                               lam, beta, p, c_s)
    return np.abs(res).max(axis=1) * s ** p


def _speed(q: _PhiQP, vel, lam, beta, c_s):
    """|u + lam*sign_h(phi)*grad(phi)/|grad(phi)|| at qp."""
    wx, wy = vel
    if lam:
        safe = np.where(q.gnorm > GRAD_EPS, q.gnorm, 1.0)
        fac = np.where(q.gnorm > GRAD_EPS, lam * sign_h(q.val, beta, c_s) / safe, 0.0)
        wx = wx + fac * q.gx
        wy = wy + fac * q.gy
    return np.sqrt(wx * wx + wy * wy)


def _viscosities(q: _PhiQP, qn: _PhiQP, dt_eff, vel, lam, beta, params: NumericalParams, space: FESpace):
    h = space.mesh.diameters
    mu_lin = params.c_lin * h * _speed(q, vel, lam, beta, params.c_s).max(axis=1)
    if math.isinf(params.c_ent):
        mu_ent = np.full(h.shape, math.inf)
    elif params.c_ent == 0:
        mu_ent = np.zeros(h.shape)
    else:
        res, ent, _ = _entropy_parts(q, qn, dt_eff, vel, lam, beta, params.entropy_p, params.c_s)
        rmax = np.abs(res).max(axis=1)
        jxw = space.jxw(ref_quadrature(space.degree, N1D))
        mean = (ent * jxw).sum() / jxw.sum()
        denom = np.abs(ent - mean).max(initial=0.0)
        if denom > 0:
            mu_ent = params.c_ent * h ** 2 * rmax / denom
        else:
            # flat entropy: no normalization available, only the linear cap acts
            mu_ent = np.where(rmax > 0, math.inf, 0.0)
    return StabilizationField(np.minimum(mu_lin, mu_ent), mu_lin, mu_ent)


def viscosities(phi_stage: Field, phi_n: Field, dt_eff: float, u, lam: float, beta: float,
                params: NumericalParams) -> StabilizationField:
    """Per-cell linear, entropy and combined (minimum) viscosities."""
    return _viscosities(_PhiQP(phi_stage), _PhiQP(phi_n), dt_eff, _vel(u, phi_stage.space),
                        lam, beta, params, phi_stage.space)


# ------------------------------------------------------------------- CFL

def cfl_speed(phi: Field, u, lam: float, beta: float, c_s: float) -> np.ndarray:
    """Per-cell max of |u + lam*sign_h(phi)*grad(phi)/|grad(phi)||."""
    return _speed(_PhiQP(phi), _vel(u, phi.space), lam, beta, c_s).max(axis=1)


def cfl_dt(phi: Field, u, lam: float, beta: float, c_cfl: float, c_s: float = 0.5,
           dt_max: float = math.inf) -> float:
    speed = cfl_speed(phi, u, lam, beta, c_s)
    h = phi.space.mesh.diameters
    act = speed > 0
    if not act.any():
        return dt_max
    return min(dt_max, c_cfl * float((h[act] / speed[act]).min()))


# ------------------------------------------------------------ time stepping

class MassSolver:
    """Consistent Q1 mass matrix on the free nodes.

    The first few solves use Jacobi-CG; once a mesh has been reused for
    several solves the matrix is factorized and later solves are direct.
    """

    FACTORIZE_AFTER = 6

    def __init__(self, space: FESpace, tol: float = 1e-8, max_iter: int = 10000):
        self.space = space
        self.M = mass_matrix(space)
        self.tol = tol
        self.max_iter = max_iter
        self.n_solves = 0
        self._lu = None

    def solve_free(self, rhs_free: np.ndarray) -> np.ndarray:
        self.n_solves += 1
        if self._lu is None and self.n_solves > self.FACTORIZE_AFTER:
            self._lu = DirectSolver(self.M, singular=False)
        if self._lu is not None:
            return self._lu.solve(rhs_free)
        return solve_spd(self.M, rhs_free, tol=self.tol, max_iter=self.max_iter)

    def solve(self, rhs_free: np.ndarray) -> Field:
        return Field(self.space, self.space.expand(self.solve_free(rhs_free)))


def mass_solver(space: FESpace, params: NumericalParams) -> MassSolver:
    cache = space.__dict__.setdefault("_mass_solvers", {})
    key = (params.lin_solver_rel_tol, params.lin_solver_max_iter)
    if key not in cache:
        cache[key] = MassSolver(space, *key)
    return cache[key]


def _load(space: FESpace, integrand: np.ndarray, mu: np.ndarray | None = None, q: _PhiQP | None = None):
    """Condensed load vector of int integrand*W - int mu*grad(phi).grad(W)."""
    quad = ref_quadrature(space.degree, N1D)
    m = space.mesh
    jxw = space.jxw(quad)
    local = (integrand * jxw) @ quad.phi
    if mu is not None and q is not None:
        wj = mu[:, None] * jxw
        local -= ((q.gx * wj) / m.hx[:, None]) @ quad.dphi[:, :, 0]
        local -= ((q.gy * wj) / m.hy[:, None]) @ quad.dphi[:, :, 1]
    return space.C.T @ scatter_vector(space, local)


def ssprk3_step(state: LevelSetState, u_n, u_half, u_np1, dt: float, params: NumericalParams,
                t_np1: float | None = None, solver: MassSolver | None = None,
                stabilize: bool = True) -> tuple[LevelSetState, StepInfo]:
    """Advance the level set by one SSP-RK3 step.

    Stage (i) is a plain Galerkin step with u(t^n); stages (ii) and (iii)
    add the stabilization viscosity evaluated on the stage field being
    differentiated, with residual time levels t^{n+1} and t^{n+1/2}.
    The viscous terms carry the same time-step weight as the transport
    terms of their stage.
    """
    phi_n = state.phi
    space = phi_n.space
    solver = solver or mass_solver(space, params)
    beta, lam, c_s = state.beta, state.lam, params.c_s
    M = solver.M
    un, uh, u1 = _vel(u_n, space), _vel(u_half, space), _vel(u_np1, space)

    qn = _PhiQP(phi_n)
    Mn = M @ phi_n.values[space.free]
    x1 = solver.solve_free(Mn + dt * _load(space, _transport(qn, un, lam, beta, c_s)))
    phi1 = Field(space, space.expand(x1))

    q1 = _PhiQP(phi1)
    v2 = _viscosities(q1, qn, dt, u1, lam, beta, params, space) if stabilize else _zero_visc(space)
    rhs2 = 0.75 * Mn + 0.25 * (M @ x1) + 0.25 * dt * _load(space, _transport(q1, u1, lam, beta, c_s), v2.mu_stab, q1)
    x2 = solver.solve_free(rhs2)
    phi2 = Field(space, space.expand(x2))

    q2 = _PhiQP(phi2)
    v3 = _viscosities(q2, qn, 0.5 * dt, uh, lam, beta, params, space) if stabilize else _zero_visc(space)
    rhs3 = Mn / 3.0 + (2.0 / 3.0) * (M @ x2) + (2.0 / 3.0) * dt * _load(space, _transport(q2, uh, lam, beta, c_s), v3.mu_stab, q2)
    phi3 = solver.solve(rhs3)

    if state.inflow is not None:
        phi3 = state.inflow.apply(phi3, t_np1 if t_np1 is not None else 0.0)
    new = LevelSetState(phi3, beta, lam, state.inflow)
    return new, StepInfo(v2, v3)


def _zero_visc(space: FESpace) -> StabilizationField:
    z = np.zeros(space.mesh.n_cells)
    return StabilizationField(z, z.copy(), z.copy())


def tanh_profile(dist, beta: float):
    """beta*tanh(d/beta): the equilibrium of the reinitialization dynamics."""
    return beta * np.tanh(np.asarray(dist, dtype=float) / beta)
