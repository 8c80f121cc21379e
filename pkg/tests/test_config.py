import math

import pytest
from hypothesis import given, settings, strategies as st

from levelflow.config import (SHAMPOO, SHAMPOO_MODIFIED, ConfigError, Constant, Cross, NumericalParams,
                              PhysicalParams, ScenarioConfig, default_params, parse_scenario, serialize,
                              with_numerical)

MINIMAL = """
domain.x0 = 0
domain.x1 = 1
domain.y0 = 0
domain.y1 = 2
mesh.h0 = 0.25
time.t_final = 1
"""

BUBBLE1 = """
name = bubble1
domain.x0 = 0
domain.x1 = 1
domain.y0 = 0
domain.y1 = 2
mesh.h0 = 0.03125
time.t_final = 3
bc.left = slip
bc.right = slip
levelset.init = circle
levelset.center = 0.5, 0.5
levelset.radius = 0.25
fluid.plus.rho = 1000
fluid.plus.mu = 10
fluid.minus.rho = 100
fluid.minus.mu = 1
fluid.sigma = 24.5
gravity = 0, -0.98
"""


class TestDefaults:
    def test_table_values(self):
        p = default_params()
        assert p.c_cfl == 0.25
        assert p.c_lambda == 0.01
        assert (p.c_h, p.c_s) == (1.25, 0.5)
        assert (p.c_r, p.c_c, p.r_max) == (2.0, 2.0, 2)
        assert (p.c_lin, p.c_ent) == (0.1, 0.1)
        assert p.entropy_p == 20
        assert p.c_stab == 0.1

    def test_solver_defaults(self):
        p = default_params()
        assert p.lin_solver_rel_tol == 1e-8
        assert p.lin_solver_max_iter == 10000

    def test_shampoo_constants(self):
        assert (SHAMPOO.mu_0, SHAMPOO.mu_inf, SHAMPOO.gamma_c, SHAMPOO.exponent_n) == (5.7, 1e-3, 15.0, 1.0)
        assert (SHAMPOO_MODIFIED.gamma_c, SHAMPOO_MODIFIED.exponent_n) == (970.0, 3.0)


class TestValidation:
    def test_coarsen_below_refine(self):
        with pytest.raises(ConfigError, match="C_C ≥ C_R"):
            NumericalParams(c_c=1.0, c_r=2.0).validate()

    def test_document_coarsen_below_refine(self):
        with pytest.raises(ConfigError, match="C_C ≥ C_R"):
            parse_scenario(MINIMAL + "num.c_c = 1\nnum.c_r = 2\n")

    @pytest.mark.parametrize("field", ["c_cfl", "c_h", "c_s", "c_stab", "lin_solver_rel_tol"])
    def test_positive_constants(self, field):
        with pytest.raises(ConfigError):
            NumericalParams(**{field: 0.0}).validate()

    def test_entropy_exponent(self):
        with pytest.raises(ConfigError):
            NumericalParams(entropy_p=0.5).validate()

    def test_negative_r_max(self):
        with pytest.raises(ConfigError):
            NumericalParams(r_max=-1).validate()

    def test_cross_ordering(self):
        with pytest.raises(ConfigError):
            Cross(mu_0=1e-3, mu_inf=5.7, gamma_c=1.0, exponent_n=1.0).validate()

    def test_physical_bounds(self):
        with pytest.raises(ConfigError):
            PhysicalParams(rho_plus=-1.0).validate()
        with pytest.raises(ConfigError):
            PhysicalParams(sigma=-1.0).validate()

    def test_window_outside_side(self):
        doc = MINIMAL + "bc.top = inflow\nbc.top.window = 0.5, 1.5\nbc.top.velocity = 0, -1\n"
        with pytest.raises(ConfigError, match="window"):
            parse_scenario(doc)

    def test_init_pressure_kind(self):
        assert parse_scenario(MINIMAL + "flow.init_pressure = hydrostatic\n").flow.init_pressure == "hydrostatic"
        with pytest.raises(ConfigError, match="init_pressure"):
            parse_scenario(MINIMAL + "flow.init_pressure = guess\n")

    def test_bad_h0(self):
        with pytest.raises(ConfigError):
            parse_scenario(MINIMAL.replace("mesh.h0 = 0.25", "mesh.h0 = 0"))


class TestParse:
    def test_minimal_gets_defaults(self):
        cfg = parse_scenario(MINIMAL)
        assert cfg.numerical == default_params()
        assert cfg.domain == (0.0, 1.0, 0.0, 2.0)
        assert cfg.h0 == 0.25 and cfg.t_final == 1.0
        assert all(bc.kind == "dirichlet" for bc in cfg.bcs.values())

    def test_bubble_case_one(self):
        cfg = parse_scenario(BUBBLE1)
        ph = cfg.physical
        assert (ph.rho_plus, ph.rho_minus) == (1000.0, 100.0)
        assert ph.viscosity_plus == Constant(10.0) and ph.mu_minus == 1.0
        assert ph.gravity == (0.0, -0.98)
        assert ph.sigma == 24.5
        assert cfg.bcs["left"].kind == "slip"

    def test_error_carries_line(self):
        with pytest.raises(ConfigError, match="line 3"):
            parse_scenario("domain.x0 = 0\nmesh.h0 = 0.5\nthis is not a pair\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_scenario(MINIMAL + "mesh.hmin = 0.1\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_scenario(MINIMAL + "mesh.h0 = 0.5\n")

    def test_comments_and_blank_lines(self):
        cfg = parse_scenario("# header\n\n" + MINIMAL.replace("time.t_final = 1", "time.t_final = 1  # end"))
        assert cfg.t_final == 1.0

    def test_cross_model(self):
        doc = MINIMAL + ("fluid.plus.model = cross\nfluid.plus.mu_0 = 5.7\nfluid.plus.mu_inf = 1e-3\n"
                         "fluid.plus.gamma_c = 970\nfluid.plus.n = 3\n")
        assert parse_scenario(doc).physical.viscosity_plus == SHAMPOO_MODIFIED

    def test_cross_missing_constant(self):
        with pytest.raises(ConfigError, match="gamma_c"):
            parse_scenario(MINIMAL + "fluid.plus.model = cross\nfluid.plus.mu_0 = 5.7\nfluid.plus.mu_inf = 1e-3\nfluid.plus.n = 3\n")

    def test_with_numerical(self):
        cfg = with_numerical(parse_scenario(MINIMAL), c_cfl=0.5)
        assert cfg.numerical.c_cfl == 0.5


class TestRoundTrip:
    def test_bubble(self):
        cfg = parse_scenario(BUBBLE1)
        assert parse_scenario(serialize(cfg)) == cfg

    def test_inflow(self):
        doc = MINIMAL + "bc.top = inflow\nbc.top.window = 0.45, 0.55\nbc.top.velocity = 0, -1\nbc.top.outside = slip\n"
        cfg = parse_scenario(doc)
        assert parse_scenario(serialize(cfg)) == cfg

    @settings(max_examples=40, deadline=None)
    @given(
        c_cfl=st.floats(1e-3, 1.0),
        c_r=st.floats(0.1, 3.0),
        extra=st.floats(0.0, 2.0),
        r_max=st.integers(0, 5),
        rho=st.floats(1e-3, 1e4),
        sigma=st.floats(0.0, 100.0),
        h0=st.sampled_from([0.5, 0.25, 0.125]),
        t_final=st.floats(1e-3, 10.0),
    )
    def test_property(self, c_cfl, c_r, extra, r_max, rho, sigma, h0, t_final):
        num = NumericalParams(c_cfl=c_cfl, c_r=c_r, c_c=c_r + extra, r_max=r_max)
        cfg = ScenarioConfig(h0=h0, t_final=t_final, numerical=num,
                             physical=PhysicalParams(rho_plus=rho, sigma=sigma)).validate()
        assert parse_scenario(serialize(cfg)) == cfg
