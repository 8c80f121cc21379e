import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levelflow.config import NumericalParams
from levelflow.fem import FESpace, Field, integrate, interpolate
from levelflow.levelset import (LevelSetState, InflowData, cfl_dt, compute_lambda, cutoff_g, entropy_residual,
                                sign_h, ssprk3_step, tanh_profile, transport_rhs, viscosities)
from levelflow.mesh import build_uniform

PARAMS = NumericalParams()


def q1(h=0.125):
    return FESpace(build_uniform((0, 1, 0, 1), h), 1)


class TestPointwise:
    def test_sign_band_is_closed(self):
        beta, cs = 0.1, 0.5
        thr = beta * math.tanh(cs)
        s = np.array([-1.0, -thr * 1.0000001, -thr, 0.0, thr, thr * 1.0000001, 1.0])
        assert sign_h(s, beta, cs).tolist() == [-1, -1, 0, 0, 0, 1, 1]

    def test_lambda(self):
        assert compute_lambda(3.0, 0.01) == pytest.approx(0.03)
        assert compute_lambda(0.0, 0.01) == 0.0

    def test_cutoff(self):
        assert cutoff_g(np.array([0.0, 0.1, -0.2]), 0.1).tolist() == pytest.approx([1.0, 0.0, -3.0])

    def test_tanh_profile_is_steady_in_1d(self):
        # lam * (G(phi) - |phi'|) vanishes for phi = beta tanh(d/beta)
        beta, d = 0.05, np.linspace(-0.2, 0.2, 41)
        phi = tanh_profile(d, beta)
        dphi = 1.0 / np.cosh(d / beta) ** 2
        assert np.allclose(cutoff_g(phi, beta) - dphi, 0.0, atol=1e-14)


class TestTransport:
    def test_pure_advection_of_linear_field(self):
        sp_ = q1()
        phi = interpolate(sp_, lambda x, y: 2 * x - y)
        r = transport_rhs(phi, (0.5, 1.5), 0.0, 0.1)
        assert np.allclose(r, -(2 * 0.5 - 1.5))

    def test_reinit_term_on_unit_slope(self):
        sp_ = q1()
        beta = 0.2
        phi = interpolate(sp_, lambda x, y: y - 0.5)
        r = transport_rhs(phi, None, 1.0, beta, 0.5)
        xq = sp_.qp_coords(sp_.quadrature(3))
        v = xq[..., 1] - 0.5
        expected = sign_h(v, beta, 0.5) * (-(v / beta) ** 2)
        assert np.allclose(r, expected, atol=1e-12)

    def test_callable_field_and_constant_velocity_agree(self):
        sp_ = q1()
        vs = FESpace(sp_.mesh, 2, 2)
        phi = interpolate(sp_, lambda x, y: np.sin(3 * x) * y)
        U = interpolate(vs, lambda x, y: (0.3 + 0 * x, -0.7 + 0 * y))
        a = transport_rhs(phi, (0.3, -0.7), 0.0, 0.1)
        b = transport_rhs(phi, lambda x, y: (0.3 + 0 * x, -0.7 + 0 * y), 0.0, 0.1)
        c = transport_rhs(phi, U, 0.0, 0.1)
        assert np.allclose(a, b) and np.allclose(a, c)


class TestEntropyViscosity:
    def test_residual_zero_at_rest(self):
        sp_ = q1()
        phi = interpolate(sp_, lambda x, y: 0.1 * np.tanh((y - 0.5) / 0.1))
        scale = np.abs(phi.values).max() ** 20 / 0.01
        assert np.abs(entropy_residual(phi, phi, 0.01, None, 0.0, 0.1)).max() < 1e-12 * scale

    def test_linear_viscosity(self):
        sp_ = q1()
        phi = interpolate(sp_, lambda x, y: x - 0.5)
        v = viscosities(phi, phi, 0.01, (3.0, 4.0), 0.0, 0.1, PARAMS)
        assert np.allclose(v.mu_lin, 0.1 * sp_.mesh.diameters * 5.0)
        assert np.all(v.mu_stab == np.minimum(v.mu_lin, v.mu_ent))

    def test_switch_off(self):
        sp_ = q1()
        phi = interpolate(sp_, lambda x, y: x - 0.5)
        off = NumericalParams(c_lin=0.0, c_ent=0.0)
        v = viscosities(phi, Field(sp_, 0.9 * phi.values), 0.01, (1.0, 0.0), 0.0, 0.1, off)
        assert not v.mu_stab.any()

    def test_entropy_viscosity_small_for_consistent_motion(self):
        sp_ = q1(1 / 32)
        dt = 1e-3
        f = lambda x, y: 0.2 - np.hypot(x - 0.5, y - 0.5)
        phi_n = interpolate(sp_, f)
        phi_s = interpolate(sp_, lambda x, y: f(x - dt, y))
        good = viscosities(phi_s, phi_n, dt, (1.0, 0.0), 0.0, 0.1, PARAMS)
        bad = viscosities(phi_s, phi_n, dt, (-1.0, 0.0), 0.0, 0.1, PARAMS)
        assert good.mu_ent.max() < 0.1 * bad.mu_ent.max()


class TestCFL:
    def test_constant_speed(self):
        sp_ = q1(0.25)
        phi = interpolate(sp_, lambda x, y: x)
        dt = cfl_dt(phi, (2.0, 0.0), 0.0, 0.1, 0.25)
        assert dt == pytest.approx(0.25 * 0.25 * math.sqrt(2) / 2.0)

    def test_rest_returns_cap(self):
        sp_ = q1(0.25)
        phi = interpolate(sp_, lambda x, y: x)
        assert cfl_dt(phi, None, 0.0, 0.1, 0.25, dt_max=0.7) == 0.7


class TestStep:
    def test_rest_is_fixed_point(self):
        sp_ = q1()
        phi = interpolate(sp_, lambda x, y: 0.3 - np.hypot(x - 0.4, y - 0.6))
        st0 = LevelSetState(phi, 0.1)
        new, info = ssprk3_step(st0, None, None, None, 0.01, PARAMS)
        assert np.allclose(new.phi.values, phi.values, atol=1e-13)
        assert not info.visc_stage3.mu_stab.any()

    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 1), st.floats(-1, 1))
    @settings(max_examples=25, deadline=None)
    def test_linear_field_translates_exactly(self, ux, uy, a, b):
        sp_ = q1(0.25)
        f = lambda x, y, t: a * (x - ux * t) + b * (y - uy * t) + 0.1
        phi = interpolate(sp_, lambda x, y: f(x, y, 0.0))
        p = NumericalParams(lin_solver_rel_tol=1e-13)
        new, _ = ssprk3_step(LevelSetState(phi, 0.1), (ux, uy), (ux, uy), (ux, uy), 0.05, p, stabilize=False)
        exact = interpolate(sp_, lambda x, y: f(x, y, 0.05))
        assert np.allclose(new.phi.values, exact.values, atol=1e-10)

    def test_reinitialization_drives_toward_tanh(self):
        sp_ = q1(1 / 32)
        beta, lam = 0.05, 1.0
        target = interpolate(sp_, lambda x, y: tanh_profile(y - 0.5, beta))
        state = LevelSetState(interpolate(sp_, lambda x, y: 0.5 * (y - 0.5)), beta, lam)
        dist = lambda s: math.sqrt(integrate(Field(sp_, (s.phi.values - target.values) ** 2)))
        d0 = dist(state)
        dt = cfl_dt(state.phi, None, lam, beta, 0.25)
        for _ in range(60):
            state, _ = ssprk3_step(state, None, None, None, dt, PARAMS)
        assert dist(state) < 0.3 * d0
        # the zero level set does not move
        mid = np.abs(sp_.node_coords[:, 1] - 0.5) < 1e-12
        assert np.abs(state.phi.values[mid]).max() < 1e-10

    def test_inflow_values_are_imposed(self):
        sp_ = q1()
        inflow = InflowData(lambda x, y: y > 1 - 1e-12, lambda x, y, t: np.full(np.shape(x), -0.25))
        phi = interpolate(sp_, lambda x, y: y - 0.5)
        new, _ = ssprk3_step(LevelSetState(phi, 0.1, 0.0, inflow), None, None, None, 0.01, PARAMS, t_np1=0.01)
        top = sp_.boundary_nodes("top")
        assert np.allclose(new.phi.values[top], -0.25)
