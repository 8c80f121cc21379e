"""One global time step: level set, then Navier-Stokes, then mesh adaption.

Material properties are blended pointwise at the 3x3 Gauss points through
a regularized Heaviside of the level set; the plus phase may follow the
Cross shear-thinning law.  Surface tension enters through a regularized
Dirac measure and the tangential projector of the level-set gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .config import Constant, Cross, NumericalParams, PhysicalParams
from .fem import Field, FESpace, interpolate, ref_quadrature, transfer_field
from .levelset import InflowData, LevelSetState, StepInfo, cfl_dt, compute_lambda, ssprk3_step
from .mesh import QuadMesh, adapt
from .nsolver import (FlowBoundary, NSDiscretization, NSState, SurfaceTensionData, cfl_dt_ns, hydrostatic_pressure,
                      min_side, ns_step, symmetric_strain_norm)

N1D = 3
GRAD_EPS = 1e-12
MAX_STEP_RATIO = 2.0
TENSION_N1D = 3


# ------------------------------------------------------------ pointwise laws

def heaviside_h(s, beta: float, c_h: float):
    """Piecewise linear Heaviside in [-1, 1] with ramp half-width beta*tanh(c_h)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    w = beta * math.tanh(c_h)
    return np.clip(np.asarray(s, dtype=float) / w, -1.0, 1.0)


def cross_viscosity(gamma, model: Cross):
    """mu_inf + (mu_0 - mu_inf) / (1 + (gamma / gamma_c)^n)."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ValueError("shear rate must be nonnegative")
    return model.mu_inf + (model.mu_0 - model.mu_inf) / (1.0 + (g / model.gamma_c) ** model.exponent_n)


def shear_rate(grad: np.ndarray) -> np.ndarray:
    """gamma = Frobenius norm of the strain-rate tensor; grad[..., c, d] = dU_c/dx_d."""
    return symmetric_strain_norm(grad)


def plus_viscosity(model, gamma=None):
    if isinstance(model, Cross):
        return cross_viscosity(0.0 if gamma is None else gamma, model)
    return model.mu


def dirac_eps(phi, grad, epsilon: float):
    """Rescaled piecewise linear Dirac measure of the zero level set.

    ``phi`` has shape (...), ``grad`` shape (..., 2).  The half-width is
    eps * |grad|_1 / |grad|_2 and the value carries a factor |grad|_2.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    phi = np.asarray(phi, dtype=float)
    grad = np.asarray(grad, dtype=float)
    n2 = np.sqrt((grad ** 2).sum(axis=-1))
    n1 = np.abs(grad).sum(axis=-1)
    ok = n2 > GRAD_EPS
    eps_t = epsilon * np.where(ok, n1 / np.where(ok, n2, 1.0), 1.0)
    a = np.abs(phi)
    val = (1.0 / eps_t) * (1.0 - a / eps_t) * n2
    return np.where(ok & (a < eps_t), val, 0.0)


# ------------------------------------------------------------ field level

@dataclass
class MaterialFields:
    """Density and viscosity at the Gauss points, shape (E, nq)."""

    rho: np.ndarray
    mu: np.ndarray

    @property
    def rho_min(self) -> float:
        return float(self.rho.min())

    @property
    def mu_min(self) -> float:
        return float(self.mu.min())


def phi_at_qp(phi: Field):
    """Level-set value (E, nq) and gradient (E, nq, 2) at the 3x3 Gauss points."""
    q = ref_quadrature(phi.space.degree, N1D)
    return phi.at_qp(q), phi.grad_at_qp(q)


def blend(phi: Field, phys: PhysicalParams, beta: float, c_h: float, gamma=None) -> MaterialFields:
    """rho, mu = plus*(1+H)/2 + minus*(1-H)/2 pointwise.

    ``gamma`` (E, nq) is the shear rate fed to a Cross plus phase.
    """
    val, _ = phi_at_qp(phi)
    H = heaviside_h(val, beta, c_h)
    wp, wm = 0.5 * (1.0 + H), 0.5 * (1.0 - H)
    rho = phys.rho_plus * wp + phys.rho_minus * wm
    mu = plus_viscosity(phys.viscosity_plus, gamma) * wp + phys.mu_minus * wm
    return MaterialFields(rho, np.broadcast_to(mu, rho.shape).copy())


def surface_tension_forms(phi: Field, sigma: float, epsilon: float,
                          n1d: int = TENSION_N1D) -> SurfaceTensionData | None:
    """Dirac weights and unit normals driving both surface-tension terms.

    The explicit part is -sigma int delta (P : grad V) and the implicit
    part dt sigma int delta (grad U P) : (grad V P), P = I - n n.  Points
    with a vanishing gradient get delta = 0 and n = 0 (P = I).
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return None
    q = ref_quadrature(phi.space.degree, n1d)
    val, grad = phi.at_qp(q), phi.grad_at_qp(q)
    delta = dirac_eps(val, grad, epsilon)
    n2 = np.sqrt((grad ** 2).sum(-1))
    ok = n2 > GRAD_EPS
    normal = np.where(ok[..., None], grad / np.where(ok, n2, 1.0)[..., None], 0.0)
    return SurfaceTensionData(sigma, delta, normal, n1d)


# --------------------------------------------------------- the time loop

@dataclass(frozen=True)
class FlowProblem:
    """Everything that stays fixed during a run.

    With ``prescribed`` set the velocity is the given function of
    ``(x, y, t)`` and no Navier-Stokes solve is done.  ``beta=None`` ties
    the filter width to the smallest cell side of the current mesh.
    """

    phys: PhysicalParams = field(default_factory=PhysicalParams)
    params: NumericalParams = field(default_factory=NumericalParams)
    boundary: FlowBoundary = field(default_factory=FlowBoundary.no_slip)
    prescribed: Callable | None = None
    inflow: InflowData | None = None
    beta: float | None = None
    dt_max: float = math.inf
    dt_fixed: float | None = None
    first_step_factor: float = 0.1
    adapt: bool = True
    stabilize: bool = True
    body_force: Callable | None = None
    init_pressure: str = "zero"

    def beta_for(self, mesh: QuadMesh) -> float:
        return self.beta if self.beta is not None else min_side(mesh)


@dataclass
class SimulationState:
    mesh: QuadMesh
    ls: LevelSetState
    ns: NSState | None
    disc: NSDiscretization | None
    t: float = 0.0
    step: int = 0
    dt_history: tuple = ()
    materials: MaterialFields | None = None
    ls_info: StepInfo | None = None
    div_norm: float = 0.0
    dt_cfl_ls: float = math.inf
    dt_cfl_ns: float = math.inf

    @property
    def beta(self) -> float:
        return self.ls.beta

    @property
    def velocity(self) -> Field | None:
        return None if self.ns is None else self.ns.U_n


def _adapt_to(mesh: QuadMesh, phi_at, beta: float, params: NumericalParams, max_rounds: int):
    for _ in range(max_rounds):
        new, rep = adapt(mesh, phi_at, beta, params.c_r, params.c_c, params.r_max)
        if not rep.changed:
            return mesh
        mesh = new
    return mesh


def initial_state(mesh: QuadMesh, problem: FlowProblem, phi0: Callable, u0: Callable | None = None) -> SimulationState:
    """Adapt the initial mesh to ``phi0(x, y, beta)`` and interpolate the data.

    ``u0(x, y) -> (ux, uy)`` sets the initial velocity (zero by default).
    The pressure starts at zero, or in balance with gravity when
    ``problem.init_pressure`` is ``"hydrostatic"``.
    """
    params = problem.params
    root = min(mesh.root_size)
    beta = problem.beta if problem.beta is not None else root / 2 ** params.r_max
    if problem.adapt and params.r_max > 0:
        def phi_at(pts):
            return phi0(pts[:, 0], pts[:, 1], beta)
        mesh = _adapt_to(mesh, phi_at, beta, params, params.r_max + 2)
    beta = problem.beta_for(mesh)
    lspace = FESpace(mesh, 1, 1)
    phi = interpolate(lspace, lambda x, y: phi0(x, y, beta))
    if problem.inflow is not None:
        phi = problem.inflow.apply(phi, 0.0)
    disc = ns = None
    if problem.prescribed is None:
        disc = NSDiscretization(mesh, problem.boundary, params)
        ns = NSState.at_rest(disc.vspace, disc.pspace)
        if u0 is not None:
            U = interpolate(disc.vspace, u0)
            ns = replace(ns, U_n=U, U_nm1=U.copy())
    state = SimulationState(mesh, LevelSetState(phi, beta, 0.0, problem.inflow), ns, disc)
    state.materials = _materials(state, problem, None)
    if ns is not None and problem.init_pressure == "hydrostatic":
        P = hydrostatic_pressure(disc, state.materials.rho, problem.phys.gravity)
        state.ns = replace(ns, P_n=P)
    return state


def _materials(state: SimulationState, problem: FlowProblem, U_star: Field | None) -> MaterialFields:
    gamma = None
    if isinstance(problem.phys.viscosity_plus, Cross) and U_star is not None:
        gamma = shear_rate(U_star.grad_at_qp(ref_quadrature(2, N1D)))
    return blend(state.ls.phi, problem.phys, state.ls.beta, problem.params.c_h, gamma)


def _max_speed(problem: FlowProblem, state: SimulationState, t: float) -> float:
    if problem.prescribed is None:
        return state.ns.U_n.max_abs()
    x = state.ls.phi.space.node_coords
    ux, uy = problem.prescribed(x[:, 0], x[:, 1], t)
    return float(np.sqrt(np.asarray(ux) ** 2 + np.asarray(uy) ** 2).max(initial=0.0))


def choose_dt(state: SimulationState, problem: FlowProblem) -> float:
    """min of both CFL limits and dt_max; the very first NS step is shortened."""
    if problem.dt_fixed is not None:
        return problem.dt_fixed
    p = problem.params
    ls = state.ls
    if problem.prescribed is None:
        u = state.ns.U_n
        state.dt_cfl_ns = cfl_dt_ns(u, state.mesh, p.c_cfl)
    else:
        t = state.t
        u = lambda x, y: problem.prescribed(x, y, t)
    state.dt_cfl_ls = cfl_dt(ls.phi, u, ls.lam, ls.beta, p.c_cfl, p.c_s)
    dt = min(state.dt_cfl_ls, state.dt_cfl_ns, problem.dt_max)
    if not math.isfinite(dt):
        # nothing moves yet and no cap was given: one cell per unit speed
        dt = p.c_cfl * min_side(state.mesh)
    if problem.prescribed is None:
        if state.step == 0:
            dt *= problem.first_step_factor
        elif state.dt_history:
            # variable-step BDF2 is zero-stable only for moderate step ratios
            dt = min(dt, MAX_STEP_RATIO * state.dt_history[-1])
    return dt


def extrapolated_velocities(ns: NSState, dt: float):
    """U(t^n), U(t^{n+1/2}), U(t^{n+1}) from U^n, U^{n-1}."""
    eta = 0.0 if ns.dt_n is None else dt / ns.dt_n
    Un, Unm1 = ns.U_n.values, ns.U_nm1.values
    sp_ = ns.U_n.space
    d = Un - Unm1
    return ns.U_n, Field(sp_, Un + 0.5 * eta * d), Field(sp_, Un + eta * d)


def advance(state: SimulationState, problem: FlowProblem, dt: float | None = None) -> SimulationState:
    """One global step; returns a new state (the input is not modified)."""
    p = problem.params
    t_n = state.t
    if dt is None:
        dt = choose_dt(state, problem)
    t_np1 = t_n + dt
    lam = compute_lambda(_max_speed(problem, state, t_n), p.c_lambda)
    ls_in = replace(state.ls, lam=lam)

    if problem.prescribed is None:
        u_n, u_half, u_np1 = extrapolated_velocities(state.ns, dt)
    else:
        f = problem.prescribed
        u_n = lambda x, y: f(x, y, t_n)
        u_half = lambda x, y: f(x, y, t_n + 0.5 * dt)
        u_np1 = lambda x, y: f(x, y, t_np1)
    ls_new, info = ssprk3_step(ls_in, u_n, u_half, u_np1, dt, p, t_np1=t_np1, stabilize=problem.stabilize)

    new = SimulationState(state.mesh, ls_new, state.ns, state.disc, t_np1, state.step + 1,
                          state.dt_history + (dt,), None, info, 0.0, state.dt_cfl_ls, state.dt_cfl_ns)
    if problem.prescribed is None:
        mats = _materials(new, problem, u_np1)
        eps = ls_new.beta * math.tanh(p.c_h)
        tension = surface_tension_forms(ls_new.phi, problem.phys.sigma, eps)
        ns_new, diag = ns_step(state.disc, state.ns, dt, mats.rho, mats.mu, t_np1,
                               gravity=problem.phys.gravity, body_force=problem.body_force, tension=tension)
        new.ns, new.materials, new.div_norm = ns_new, mats, diag.div_norm
    else:
        new.materials = _materials(new, problem, None)

    if problem.adapt and p.r_max > 0:
        new = remesh(new, problem)
    return new


def remesh(state: SimulationState, problem: FlowProblem) -> SimulationState:
    """Adapt to the current level set and carry every field to the new mesh."""
    p = problem.params
    phi = state.ls.phi
    mesh, rep = adapt(state.mesh, phi.evaluate, state.ls.beta, p.c_r, p.c_c, p.r_max)
    if not rep.changed:
        return state
    lspace = FESpace(mesh, 1, 1)
    phi_new = transfer_field(phi, lspace)
    beta = problem.beta_for(mesh)
    ls = LevelSetState(phi_new, beta, state.ls.lam, state.ls.inflow)
    ns = disc = None
    if state.ns is not None:
        disc = NSDiscretization(mesh, problem.boundary, p)
        vs, ps = disc.vspace, disc.pspace
        o = state.ns
        ns = NSState(transfer_field(o.U_n, vs), transfer_field(o.U_nm1, vs), transfer_field(o.P_n, ps),
                     transfer_field(o.Psi_n, ps), transfer_field(o.Psi_nm1, ps), o.dt_n)
    new = replace(state, mesh=mesh, ls=ls, ns=ns, disc=disc, ls_info=None)
    new.materials = _materials(new, problem, None if ns is None else ns.U_n)
    return new


__all__ = [
    "Constant", "Cross", "FlowProblem", "MaterialFields", "SimulationState", "advance", "blend", "choose_dt",
    "cross_viscosity", "dirac_eps", "extrapolated_velocities", "heaviside_h", "initial_state", "phi_at_qp",
    "plus_viscosity", "remesh", "shear_rate", "surface_tension_forms",
]
