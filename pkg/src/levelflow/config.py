"""Numerical/physical constants and the scenario file format.

Scenario files are flat UTF-8 documents made of ``section.key = value``
lines.  ``#`` starts a comment, arrays are comma separated.  Every key that
is accepted is listed in :data:`KNOWN_KEYS`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Union

SIDES = ("left", "right", "bottom", "top")
BC_KINDS = ("dirichlet", "open", "slip", "inflow")
INIT_KINDS = ("circle", "halfplane", "box", "jet", "slotted_disk")
PRESCRIBED_FLOWS = ("none", "rotation", "zalesak", "vortex", "periodic_vortex", "uniform")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent scenario documents."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class NumericalParams:
    c_cfl: float = 0.25
    c_lambda: float = 0.01
    c_h: float = 1.25
    c_s: float = 0.5
    c_r: float = 2.0
    c_c: float = 2.0
    r_max: int = 2
    c_lin: float = 0.1
    c_ent: float = 0.1
    entropy_p: float = 20.0
    c_stab: float = 0.1
    lin_solver_rel_tol: float = 1e-8
    lin_solver_max_iter: int = 10000

    def validate(self) -> "NumericalParams":
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "r_max":
                if int(v) != v or v < 0:
                    raise ConfigError("r_max must be a nonnegative integer")
            elif f.name in ("c_lambda", "c_lin", "c_ent"):
                # zero switches the corresponding mechanism off
                if not v >= 0:
                    raise ConfigError(f"{f.name} must be >= 0")
            elif not v > 0:
                raise ConfigError(f"{f.name} must be > 0")
        if self.c_c < self.c_r:
            raise ConfigError("C_C ≥ C_R violated: coarsening threshold below refinement threshold")
        if self.entropy_p < 1:
            raise ConfigError("entropy exponent p must be >= 1")
        return self


def default_params() -> NumericalParams:
    return NumericalParams()


@dataclass(frozen=True)
class Constant:
    mu: float

    def validate(self):
        if not self.mu > 0:
            raise ConfigError("viscosity must be > 0")
        return self


@dataclass(frozen=True)
class Cross:
    """Shear-thinning law mu_inf + (mu_0 - mu_inf) / (1 + (gamma/gamma_c)^n)."""

    mu_0: float
    mu_inf: float
    gamma_c: float
    exponent_n: float

    def validate(self):
        if not (self.mu_0 >= self.mu_inf > 0):
            raise ConfigError("Cross model requires mu_0 >= mu_inf > 0")
        if not self.gamma_c > 0:
            raise ConfigError("Cross model requires gamma_c > 0")
        if not self.exponent_n > 0:
            raise ConfigError("Cross model requires n > 0")
        return self


ViscosityModel = Union[Constant, Cross]

# Shampoo constants as measured, and the smoother set used for the jet runs.
SHAMPOO = Cross(mu_0=5.7, mu_inf=1e-3, gamma_c=15.0, exponent_n=1.0)
SHAMPOO_MODIFIED = Cross(mu_0=5.7, mu_inf=1e-3, gamma_c=970.0, exponent_n=3.0)


@dataclass(frozen=True)
class PhysicalParams:
    rho_plus: float = 1.0
    rho_minus: float = 1.0
    viscosity_plus: ViscosityModel = Constant(1.0)
    mu_minus: float = 1.0
    sigma: float = 0.0
    gravity: tuple[float, float] = (0.0, 0.0)

    def validate(self) -> "PhysicalParams":
        if not (self.rho_plus > 0 and self.rho_minus > 0):
            raise ConfigError("densities must be > 0")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be >= 0")
        if not self.mu_minus > 0:
            raise ConfigError("mu_minus must be > 0")
        self.viscosity_plus.validate()
        return self

    @property
    def mu_plus_bounds(self) -> tuple[float, float]:
        v = self.viscosity_plus
        if isinstance(v, Cross):
            return v.mu_inf, v.mu_0
        return v.mu, v.mu


@dataclass(frozen=True)
class BoundaryCondition:
    """Condition on one side of the box.

    For ``inflow`` the prescribed ``velocity`` acts on the open interval
    ``window`` (a coordinate range along the side); ``outside`` is the kind
    used on the remainder of the side.
    """

    kind: str = "dirichlet"
    velocity: tuple[float, float] = (0.0, 0.0)
    window: tuple[float, float] | None = None
    outside: str = "open"


@dataclass(frozen=True)
class LevelSetInit:
    kind: str = "halfplane"
    params: dict = field(default_factory=dict)
    filter: str = "tanh"
    # +1 keeps the sign of the shape function (positive inside), -1 flips it
    orientation: float = 1.0


@dataclass(frozen=True)
class FlowSetup:
    prescribed: str = "none"
    period: float = 0.0
    init_velocity: tuple[float, float] = (0.0, 0.0)
    init_below: float | None = None
    init_pressure: str = "zero"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    h0: float = 0.125
    t_final: float = 1.0
    dt_max: float = math.inf
    dt_fixed: float | None = None
    first_step_factor: float = 0.1
    bcs: dict = field(default_factory=lambda: {s: BoundaryCondition() for s in SIDES})
    levelset: LevelSetInit = field(default_factory=LevelSetInit)
    beta: float | None = None
    flow: FlowSetup = field(default_factory=FlowSetup)
    physical: PhysicalParams = field(default_factory=PhysicalParams)
    numerical: NumericalParams = field(default_factory=NumericalParams)
    output_every: int = 0
    output_dir: str = "out"
    output_phase: str = "plus"

    def validate(self) -> "ScenarioConfig":
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("domain extents must satisfy x1 > x0 and y1 > y0")
        if not self.h0 > 0:
            raise ConfigError("mesh.h0 must be > 0")
        if not self.t_final > 0:
            raise ConfigError("time.t_final must be > 0")
        if not self.dt_max > 0:
            raise ConfigError("time.dt_max must be > 0")
        if self.dt_fixed is not None and not self.dt_fixed > 0:
            raise ConfigError("time.dt must be > 0")
        for side in SIDES:
            bc = self.bcs.get(side)
            if bc is None:
                raise ConfigError(f"missing boundary condition for side {side}")
            if bc.kind not in BC_KINDS:
                raise ConfigError(f"unknown boundary kind {bc.kind!r} on {side}")
            if bc.kind == "inflow":
                if bc.outside not in ("dirichlet", "open", "slip"):
                    raise ConfigError(f"bad outside kind {bc.outside!r} on {side}")
                if bc.window is not None:
                    lo, hi = (x0, x1) if side in ("bottom", "top") else (y0, y1)
                    a, b = bc.window
                    if not (lo <= a < b <= hi):
                        raise ConfigError(f"inflow window {bc.window} does not lie within side {side}")
        if self.levelset.kind not in INIT_KINDS:
            raise ConfigError(f"unknown levelset.init {self.levelset.kind!r}")
        if self.levelset.filter not in ("tanh", "none"):
            raise ConfigError("levelset.filter must be tanh or none")
        if self.beta is not None and not self.beta > 0:
            raise ConfigError("levelset.beta must be > 0")
        if self.flow.prescribed not in PRESCRIBED_FLOWS:
            raise ConfigError(f"unknown flow.prescribed {self.flow.prescribed!r}")
        if self.flow.init_pressure not in ("zero", "hydrostatic"):
            raise ConfigError("flow.init_pressure must be zero or hydrostatic")
        if self.output_phase not in ("plus", "minus"):
            raise ConfigError("output.phase must be plus or minus")
        if self.output_every < 0:
            raise ConfigError("output.every must be >= 0")
        if not 0 < self.first_step_factor <= 1:
            raise ConfigError("time.first_step_factor must lie in (0, 1]")
        self.physical.validate()
        self.numerical.validate()
        return self


KNOWN_KEYS = (
    "name",
    "domain.x0", "domain.x1", "domain.y0", "domain.y1",
    "mesh.h0", "mesh.r_max",
    "time.t_final", "time.dt_max", "time.dt", "time.first_step_factor",
    "bc.<side>", "bc.<side>.window", "bc.<side>.velocity", "bc.<side>.outside",
    "levelset.init", "levelset.<shape-param>", "levelset.filter", "levelset.orientation", "levelset.beta",
    "flow.prescribed", "flow.period", "flow.init_velocity", "flow.init_below",
    "flow.init_pressure",
    "fluid.plus.rho", "fluid.plus.mu", "fluid.plus.model", "fluid.plus.mu_0", "fluid.plus.mu_inf",
    "fluid.plus.gamma_c", "fluid.plus.n", "fluid.minus.rho", "fluid.minus.mu", "fluid.sigma",
    "gravity", "num.<constant-name>", "output.every", "output.dir", "output.phase",
)

_NUM_NAMES = {f.name for f in fields(NumericalParams)}


def _floats(text: str, n: int | None, line: int) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"expected numbers, got {text!r}", line) from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} comma separated numbers, got {len(vals)}", line)
    return vals


def _float(text: str, line: int) -> float:
    return _floats(text, 1, line)[0]


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document."""
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not key or not value:
            raise ConfigError(f"empty key or value in {raw.strip()!r}", lineno)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        entries[key] = (value, lineno)

    kw: dict = {}
    num: dict = {}
    fluid: dict = {}
    bc_parts: dict[str, dict] = {s: {} for s in SIDES}
    ls_params: dict = {}
    ls_kw: dict = {}
    flow_kw: dict = {}
    domain = dict(zip(("x0", "x1", "y0", "y1"), (0.0, 1.0, 0.0, 1.0)))

    for key, (value, ln) in entries.items():
        parts = key.split(".")
        head = parts[0]
        if key == "name":
            kw["name"] = value
        elif head == "domain" and len(parts) == 2 and parts[1] in domain:
            domain[parts[1]] = _float(value, ln)
        elif key == "mesh.h0":
            kw["h0"] = _float(value, ln)
        elif key in ("mesh.r_max", "num.r_max"):
            v = _float(value, ln)
            if v != int(v):
                raise ConfigError("r_max must be an integer", ln)
            num["r_max"] = int(v)
        elif key == "time.t_final":
            kw["t_final"] = _float(value, ln)
        elif key == "time.dt_max":
            kw["dt_max"] = _float(value, ln)
        elif key == "time.dt":
            kw["dt_fixed"] = _float(value, ln)
        elif key == "time.first_step_factor":
            kw["first_step_factor"] = _float(value, ln)
        elif head == "bc" and len(parts) >= 2:
            side = parts[1]
            if side not in SIDES:
                raise ConfigError(f"unknown side {side!r}", ln)
            if len(parts) == 2:
                if value not in BC_KINDS:
                    raise ConfigError(f"unknown boundary kind {value!r}", ln)
                bc_parts[side]["kind"] = value
            elif len(parts) == 3 and parts[2] == "window":
                bc_parts[side]["window"] = _floats(value, 2, ln)
            elif len(parts) == 3 and parts[2] == "velocity":
                bc_parts[side]["velocity"] = _floats(value, 2, ln)
            elif len(parts) == 3 and parts[2] == "outside":
                bc_parts[side]["outside"] = value
            else:
                raise ConfigError(f"unknown key {key!r}", ln)
        elif head == "levelset" and len(parts) == 2:
            sub = parts[1]
            if sub == "init":
                ls_kw["kind"] = value
            elif sub == "filter":
                ls_kw["filter"] = value
            elif sub == "orientation":
                ls_kw["orientation"] = _float(value, ln)
            elif sub == "beta":
                kw["beta"] = _float(value, ln)
            else:
                vals = _floats(value, None, ln)
                ls_params[sub] = vals[0] if len(vals) == 1 else vals
        elif head == "flow" and len(parts) == 2:
            sub = parts[1]
            if sub == "prescribed":
                flow_kw["prescribed"] = value
            elif sub == "period":
                flow_kw["period"] = _float(value, ln)
            elif sub == "init_velocity":
                flow_kw["init_velocity"] = _floats(value, 2, ln)
            elif sub == "init_below":
                flow_kw["init_below"] = _float(value, ln)
            elif sub == "init_pressure":
                flow_kw["init_pressure"] = value
            else:
                raise ConfigError(f"unknown key {key!r}", ln)
        elif head == "fluid":
            if key == "fluid.sigma":
                fluid["sigma"] = _float(value, ln)
            elif len(parts) == 3 and parts[1] in ("plus", "minus"):
                if parts[2] == "model":
                    fluid[f"{parts[1]}.model"] = value
                else:
                    fluid[f"{parts[1]}.{parts[2]}"] = (_float(value, ln), ln)
            else:
                raise ConfigError(f"unknown key {key!r}", ln)
        elif key == "gravity":
            kw["gravity"] = _floats(value, 2, ln)
        elif head == "num" and len(parts) == 2:
            if parts[1] not in _NUM_NAMES:
                raise ConfigError(f"unknown numerical constant {parts[1]!r}", ln)
            v = _float(value, ln)
            num[parts[1]] = int(v) if parts[1] in ("lin_solver_max_iter",) else v
        elif key == "output.every":
            v = _float(value, ln)
            if v != int(v):
                raise ConfigError("output.every must be an integer", ln)
            kw["output_every"] = int(v)
        elif key == "output.dir":
            kw["output_dir"] = value
        elif key == "output.phase":
            kw["output_phase"] = value
        else:
            raise ConfigError(f"unknown key {key!r}", ln)

    kw["domain"] = (domain["x0"], domain["x1"], domain["y0"], domain["y1"])
    kw["bcs"] = {s: BoundaryCondition(**{"kind": "dirichlet", **p}) for s, p in bc_parts.items()}
    kw["levelset"] = LevelSetInit(params=ls_params, **ls_kw)
    kw["flow"] = FlowSetup(**flow_kw)
    kw["physical"] = _physical(fluid, kw.pop("gravity", (0.0, 0.0)))
    kw["numerical"] = NumericalParams(**num)
    cfg = ScenarioConfig(**kw)
    return cfg.validate()


def _physical(fluid: dict, gravity) -> PhysicalParams:
    def get(name, default):
        return fluid[name][0] if name in fluid else default

    model = fluid.get("plus.model", "constant")
    if model == "cross":
        missing = [k for k in ("mu_0", "mu_inf", "gamma_c", "n") if f"plus.{k}" not in fluid]
        if missing:
            raise ConfigError(f"Cross model needs fluid.plus.{', fluid.plus.'.join(missing)}")
        visc: ViscosityModel = Cross(get("plus.mu_0", 0), get("plus.mu_inf", 0),
                                     get("plus.gamma_c", 0), get("plus.n", 0))
    elif model == "constant":
        visc = Constant(get("plus.mu", 1.0))
    else:
        raise ConfigError(f"unknown viscosity model {model!r}")
    return PhysicalParams(
        rho_plus=get("plus.rho", 1.0),
        rho_minus=get("minus.rho", 1.0),
        viscosity_plus=visc,
        mu_minus=get("minus.mu", 1.0),
        sigma=fluid["sigma"] if "sigma" in fluid else 0.0,
        gravity=tuple(gravity),
    )


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize(cfg: ScenarioConfig) -> str:
    """Inverse of :func:`parse_scenario` (up to comments and key order)."""
    out = [f"name = {cfg.name}"]
    for k, v in zip(("x0", "x1", "y0", "y1"), cfg.domain):
        out.append(f"domain.{k} = {_fmt(float(v))}")
    out.append(f"mesh.h0 = {_fmt(float(cfg.h0))}")
    out.append(f"time.t_final = {_fmt(float(cfg.t_final))}")
    if math.isfinite(cfg.dt_max):
        out.append(f"time.dt_max = {_fmt(float(cfg.dt_max))}")
    if cfg.dt_fixed is not None:
        out.append(f"time.dt = {_fmt(float(cfg.dt_fixed))}")
    out.append(f"time.first_step_factor = {_fmt(float(cfg.first_step_factor))}")
    for side in SIDES:
        bc = cfg.bcs[side]
        out.append(f"bc.{side} = {bc.kind}")
        out.append(f"bc.{side}.velocity = {_fmt(tuple(float(v) for v in bc.velocity))}")
        if bc.window is not None:
            out.append(f"bc.{side}.window = {_fmt(tuple(float(v) for v in bc.window))}")
        if bc.kind == "inflow":
            out.append(f"bc.{side}.outside = {bc.outside}")
    ls = cfg.levelset
    out.append(f"levelset.init = {ls.kind}")
    out.append(f"levelset.filter = {ls.filter}")
    out.append(f"levelset.orientation = {_fmt(float(ls.orientation))}")
    for k, v in sorted(ls.params.items()):
        out.append(f"levelset.{k} = {_fmt(v if isinstance(v, tuple) else float(v))}")
    if cfg.beta is not None:
        out.append(f"levelset.beta = {_fmt(float(cfg.beta))}")
    fl = cfg.flow
    out.append(f"flow.prescribed = {fl.prescribed}")
    out.append(f"flow.period = {_fmt(float(fl.period))}")
    out.append(f"flow.init_velocity = {_fmt(tuple(float(v) for v in fl.init_velocity))}")
    if fl.init_below is not None:
        out.append(f"flow.init_below = {_fmt(float(fl.init_below))}")
    out.append(f"flow.init_pressure = {fl.init_pressure}")
    ph = cfg.physical
    out.append(f"fluid.plus.rho = {_fmt(float(ph.rho_plus))}")
    v = ph.viscosity_plus
    if isinstance(v, Cross):
        out.append("fluid.plus.model = cross")
        out.append(f"fluid.plus.mu_0 = {_fmt(float(v.mu_0))}")
        out.append(f"fluid.plus.mu_inf = {_fmt(float(v.mu_inf))}")
        out.append(f"fluid.plus.gamma_c = {_fmt(float(v.gamma_c))}")
        out.append(f"fluid.plus.n = {_fmt(float(v.exponent_n))}")
    else:
        out.append(f"fluid.plus.mu = {_fmt(float(v.mu))}")
    out.append(f"fluid.minus.rho = {_fmt(float(ph.rho_minus))}")
    out.append(f"fluid.minus.mu = {_fmt(float(ph.mu_minus))}")
    out.append(f"fluid.sigma = {_fmt(float(ph.sigma))}")
    out.append(f"gravity = {_fmt(tuple(float(g) for g in ph.gravity))}")
    for f in fields(NumericalParams):
        val = getattr(cfg.numerical, f.name)
        out.append(f"num.{f.name} = {_fmt(val if isinstance(val, int) else float(val))}")
    out.append(f"output.every = {cfg.output_every}")
    out.append(f"output.dir = {cfg.output_dir}")
    out.append(f"output.phase = {cfg.output_phase}")
    return "\n".join(out) + "\n"


def with_numerical(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    return replace(cfg, numerical=replace(cfg.numerical, **changes)).validate()
