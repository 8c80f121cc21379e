"""Turn a :class:`ScenarioConfig` into initial data and a :class:`FlowProblem`.

Shapes are signed distances (positive inside) or simple min/max
compositions of them; the ``tanh`` filter maps a distance d to
beta*tanh(d/beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import ConfigError, ScenarioConfig
from .coupling import FlowProblem, SimulationState, initial_state
from .levelset import InflowData
from .mesh import build_uniform
from .nsolver import FlowBoundary, Segment


# ------------------------------------------------------------------ shapes

def _pair(params: dict, key: str, default=None):
    v = params.get(key, default)
    if v is None:
        raise ConfigError(f"levelset.{key} is required")
    v = tuple(float(a) for a in (v if isinstance(v, tuple) else (v,)))
    if len(v) != 2:
        raise ConfigError(f"levelset.{key} needs two numbers")
    return v


def _num(params: dict, key: str, default=None) -> float:
    v = params.get(key, default)
    if v is None:
        raise ConfigError(f"levelset.{key} is required")
    if isinstance(v, tuple):
        raise ConfigError(f"levelset.{key} must be a single number")
    return float(v)


def box_distance(x, y, lo, hi):
    """Signed distance to the rectangle [lo, hi], positive inside."""
    cx, cy = 0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])
    hx, hy = 0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1])
    qx = np.abs(x - cx) - hx
    qy = np.abs(y - cy) - hy
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return -(outside + inside)


def shape_distance(kind: str, params: dict) -> Callable:
    """Signed distance-like function ``d(x, y)`` of a named shape."""
    if kind == "circle":
        cx, cy = _pair(params, "center")
        r = _num(params, "radius")
        return lambda x, y: r - np.hypot(x - cx, y - cy)
    if kind == "halfplane":
        px, py = _pair(params, "point", (0.0, 0.0))
        nx, ny = _pair(params, "normal", (0.0, 1.0))
        s = math.hypot(nx, ny)
        if s == 0:
            raise ConfigError("levelset.normal must be nonzero")
        nx, ny = nx / s, ny / s
        return lambda x, y: nx * (x - px) + ny * (y - py)
    if kind == "box":
        lo, hi = _pair(params, "lo"), _pair(params, "hi")
        return lambda x, y: box_distance(x, y, lo, hi)
    if kind == "jet":
        # vertical column from y_top down to the tip, optionally with a bath below
        xc = _num(params, "jet_x")
        r = _num(params, "jet_radius")
        tip = _num(params, "jet_tip")
        top = _num(params, "jet_top")
        bath = params.get("bath_level")

        def d(x, y):
            out = box_distance(x, y, (xc - r, tip), (xc + r, top + 10 * r))
            if bath is not None:
                out = np.maximum(out, float(bath) - y)
            return out
        return d
    if kind == "slotted_disk":
        cx, cy = _pair(params, "center")
        r = _num(params, "radius")
        w = _num(params, "slot_width")
        hgt = _num(params, "slot_height")
        lo = (cx - 0.5 * w, cy - r - 1.0)
        hi = (cx + 0.5 * w, cy - r + hgt)
        return lambda x, y: np.minimum(r - np.hypot(x - cx, y - cy), -box_distance(x, y, lo, hi))
    raise ConfigError(f"unknown levelset.init {kind!r}")


def initial_levelset(cfg: ScenarioConfig) -> Callable:
    """phi0(x, y, beta) including orientation and filter."""
    d = shape_distance(cfg.levelset.kind, cfg.levelset.params)
    o = cfg.levelset.orientation
    if cfg.levelset.filter == "tanh":
        return lambda x, y, beta: beta * np.tanh(o * d(x, y) / beta)
    return lambda x, y, beta: o * d(x, y)


# ------------------------------------------------------------------ flows

def prescribed_velocity(cfg: ScenarioConfig) -> Callable | None:
    """``u(x, y, t) -> (ux, uy)`` of a kinematic scenario, or None."""
    kind = cfg.flow.prescribed
    T = cfg.flow.period
    if kind == "none":
        return None
    if kind == "rotation":
        return lambda x, y, t: (-y, x)
    if kind == "zalesak":
        return lambda x, y, t: (0.5 - y, x - 0.5)
    if kind == "uniform":
        ux, uy = cfg.flow.init_velocity
        return lambda x, y, t: (np.full(np.shape(x), ux), np.full(np.shape(x), uy))
    if kind in ("vortex", "periodic_vortex"):
        if kind == "periodic_vortex" and not T > 0:
            raise ConfigError("flow.period must be > 0 for periodic_vortex")
        cache: dict = {}

        def spatial(x, y):
            # the solver evaluates on the same cached point arrays every stage
            hit = cache.get(id(x))
            if hit is not None and hit[0] is x and hit[1] is y:
                return hit[2], hit[3]
            sx, sy = np.sin(np.pi * x), np.sin(np.pi * y)
            vx, vy = -sx * sx * np.sin(2 * np.pi * y), sy * sy * np.sin(2 * np.pi * x)
            if len(cache) > 8:
                cache.clear()
            cache[id(x)] = (x, y, vx, vy)
            return vx, vy

        def u(x, y, t):
            c = math.cos(math.pi * t / T) if kind == "periodic_vortex" else 1.0
            vx, vy = spatial(x, y)
            return c * vx, c * vy
        return u
    raise ConfigError(f"unknown flow.prescribed {kind!r}")


def _const(v):
    vx, vy = (float(a) for a in v)
    return lambda x, y, t: (np.full(np.shape(x), vx), np.full(np.shape(x), vy))


def flow_boundary(cfg: ScenarioConfig) -> FlowBoundary:
    segs = []
    for side, bc in cfg.bcs.items():
        if bc.kind == "inflow":
            segs.append(Segment(side, bc.outside, None, _const(bc.velocity) if bc.outside == "dirichlet" else None))
            segs.append(Segment(side, "dirichlet", bc.window, _const(bc.velocity)))
        elif bc.kind == "dirichlet":
            segs.append(Segment(side, "dirichlet", bc.window, _const(bc.velocity)))
        else:
            segs.append(Segment(side, bc.kind, bc.window))
    return FlowBoundary(segs)


def _inflow_levelset(cfg: ScenarioConfig, phi0: Callable, beta: float) -> InflowData | None:
    windows = [(s, bc.window) for s, bc in cfg.bcs.items() if bc.kind == "inflow"]
    if not windows:
        return None
    x0, x1, y0, y1 = cfg.domain
    tol = 1e-9 * max(x1 - x0, y1 - y0)

    def mask(x, y):
        m = np.zeros(np.shape(x), dtype=bool)
        for side, win in windows:
            on = {"left": np.abs(x - x0) < tol, "right": np.abs(x - x1) < tol,
                  "bottom": np.abs(y - y0) < tol, "top": np.abs(y - y1) < tol}[side]
            if win is not None:
                s = y if side in ("left", "right") else x
                on &= (s > win[0] + tol) & (s < win[1] - tol)
            m |= on
        return m

    return InflowData(mask, lambda x, y, t: phi0(x, y, beta))


def _initial_velocity(cfg: ScenarioConfig) -> Callable | None:
    ux, uy = cfg.flow.init_velocity
    if ux == 0 and uy == 0:
        return None
    below = cfg.flow.init_below

    def u0(x, y):
        on = np.ones(np.shape(x)) if below is None else (y < below).astype(float)
        return ux * on, uy * on
    return u0


@dataclass
class Scenario:
    config: ScenarioConfig
    problem: FlowProblem
    phi0: Callable
    u0: Callable | None

    def initial_state(self) -> SimulationState:
        mesh = build_uniform(self.config.domain, self.config.h0)
        return initial_state(mesh, self.problem, self.phi0, self.u0)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    phi0 = initial_levelset(cfg)
    prescribed = prescribed_velocity(cfg)
    num = cfg.numerical
    root = cfg.h0
    beta0 = cfg.beta if cfg.beta is not None else root / 2 ** num.r_max
    problem = FlowProblem(
        phys=cfg.physical,
        params=num,
        boundary=flow_boundary(cfg),
        prescribed=prescribed,
        inflow=_inflow_levelset(cfg, phi0, beta0),
        beta=cfg.beta,
        dt_max=cfg.dt_max,
        dt_fixed=cfg.dt_fixed,
        first_step_factor=cfg.first_step_factor,
        adapt=num.r_max > 0,
        stabilize=num.c_ent > 0 or num.c_lin > 0,
        init_pressure=cfg.flow.init_pressure,
    )
    return Scenario(cfg, problem, phi0, None if prescribed is not None else _initial_velocity(cfg))
