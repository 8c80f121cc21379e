import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levelflow.config import Constant, Cross, NumericalParams, PhysicalParams
from levelflow.coupling import (MAX_STEP_RATIO, FlowProblem, advance, blend, choose_dt, cross_viscosity,
                                dirac_eps, extrapolated_velocities, heaviside_h, initial_state, shear_rate,
                                surface_tension_forms)
from levelflow.fem import FESpace, Field, interpolate, ref_quadrature
from levelflow.mesh import build_uniform
from levelflow.nsolver import NSState, _tension_local, ns_step

SHAMPOO = Cross(mu_0=5.7, mu_inf=1e-3, gamma_c=1.0, exponent_n=1.0)
SHAMPOO_NEW = Cross(mu_0=5.7, mu_inf=1e-3, gamma_c=970.0, exponent_n=3.0)


def circle(x, y, beta):
    return 0.25 - np.hypot(x - 0.5, y - 0.5)


class TestHeaviside:
    def test_examples(self):
        b = 0.1
        w = b * math.tanh(1.25)
        assert heaviside_h(0.0, b, 1.25) == 0.0
        assert heaviside_h(2 * b, b, 1.25) == 1.0
        assert heaviside_h(-2 * b, b, 1.25) == -1.0
        assert heaviside_h(0.5 * w, b, 1.25) == pytest.approx(0.5)

    def test_rejects_nonpositive_beta(self):
        with pytest.raises(ValueError):
            heaviside_h(0.0, 0.0, 1.25)

    @given(st.floats(-1, 1), st.floats(1e-3, 1))
    @settings(max_examples=50, deadline=None)
    def test_bounded_and_odd(self, s, b):
        h = heaviside_h(s, b, 1.25)
        assert -1 <= h <= 1 and heaviside_h(-s, b, 1.25) == -h


class TestBlend:
    def test_midpoint_density(self):
        sp_ = FESpace(build_uniform((0, 1, 0, 1), 0.5), 1)
        phys = PhysicalParams(rho_plus=1000.0, rho_minus=1.0, viscosity_plus=Constant(10.0), mu_minus=0.1)
        m = blend(Field(sp_), phys, 0.1, 1.25)
        assert np.allclose(m.rho, 500.5) and np.allclose(m.mu, 5.05)

    def test_pure_phases(self):
        sp_ = FESpace(build_uniform((0, 1, 0, 1), 0.5), 1)
        phys = PhysicalParams(rho_plus=1000.0, rho_minus=100.0, viscosity_plus=Constant(10.0), mu_minus=1.0)
        plus = blend(Field(sp_, np.ones(sp_.n_nodes)), phys, 0.1, 1.25)
        minus = blend(Field(sp_, -np.ones(sp_.n_nodes)), phys, 0.1, 1.25)
        assert np.all(plus.rho == 1000.0) and np.all(minus.rho == 100.0)
        assert np.all(plus.mu == 10.0) and np.all(minus.mu == 1.0)

    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e4), st.floats(1e-3, 1e4))
    @settings(max_examples=30, deadline=None)
    def test_properties_stay_in_phase_bounds(self, seed, rp, rm):
        sp_ = FESpace(build_uniform((0, 1, 0, 1), 0.25), 1)
        phi = Field(sp_, np.random.default_rng(seed).uniform(-0.3, 0.3, sp_.n_nodes))
        gamma = np.random.default_rng(seed + 1).uniform(0, 2000, (sp_.mesh.n_cells, 9))
        phys = PhysicalParams(rho_plus=rp, rho_minus=rm, viscosity_plus=SHAMPOO_NEW, mu_minus=2e-5)
        m = blend(phi, phys, 0.1, 1.25, gamma)
        tol = 1e-12 * max(rp, rm)
        assert m.rho.min() >= min(rp, rm) - tol and m.rho.max() <= max(rp, rm) + tol
        assert m.mu.min() >= 2e-5 - 1e-15 and m.mu.max() <= 5.7 + 1e-12


class TestCross:
    def test_zero_shear(self):
        assert cross_viscosity(0.0, SHAMPOO) == pytest.approx(5.7)
        assert cross_viscosity(0.0, SHAMPOO_NEW) == pytest.approx(5.7)

    def test_half_way(self):
        assert cross_viscosity(1.0, SHAMPOO) == pytest.approx(2.8505)
        assert cross_viscosity(970.0, SHAMPOO_NEW) == pytest.approx(1e-3 + (5.7 - 1e-3) / 2)

    def test_high_shear_limit(self):
        assert cross_viscosity(1e9, SHAMPOO) == pytest.approx(1e-3, rel=1e-3)
        assert cross_viscosity(1e7, SHAMPOO_NEW) == pytest.approx(1e-3, rel=1e-6)

    @given(st.lists(st.floats(0, 1e6), min_size=2, max_size=20))
    def test_monotone(self, g):
        g = np.sort(np.array(g))
        for model in (SHAMPOO, SHAMPOO_NEW):
            assert np.all(np.diff(cross_viscosity(g, model)) <= 1e-15)

    def test_negative_shear_rejected(self):
        with pytest.raises(ValueError):
            cross_viscosity(-1.0, SHAMPOO)

    def test_shear_rate_of_simple_shear(self):
        # u = (y, 0): grad[0, 1] = 1
        grad = np.array([[0.0, 1.0], [0.0, 0.0]])
        assert shear_rate(grad) == pytest.approx(1 / math.sqrt(2))


class TestDirac:
    def test_support_and_peak(self):
        eps = 0.1
        assert dirac_eps(0.2, np.array([1.0, 0.0]), eps) == 0.0
        assert dirac_eps(0.1, np.array([1.0, 0.0]), eps) == 0.0
        assert dirac_eps(0.0, np.array([1.0, 0.0]), eps) == pytest.approx(10.0)
        assert dirac_eps(0.0, np.array([0.0, 0.0]), eps) == 0.0

    @pytest.mark.parametrize("g", [(1.0, 0.0), (1.0, 1.0), (0.3, -2.0)])
    def test_unit_mass_across_interface(self, g):
        g = np.array(g)
        n = g / np.linalg.norm(g)
        s = np.linspace(-1, 1, 200001)
        phi = s * np.linalg.norm(g)
        vals = dirac_eps(phi, np.broadcast_to(g, (s.size, 2)), 0.05)
        assert np.trapezoid(vals, s) == pytest.approx(1.0, rel=0.05)
        assert n @ n == pytest.approx(1.0)

    def test_circle_perimeter(self):
        sp_ = FESpace(build_uniform((0, 1, 0, 1), 1 / 128), 1)
        phi = interpolate(sp_, lambda x, y: circle(x, y, 0))
        q = ref_quadrature(1, 3)
        d = dirac_eps(phi.at_qp(q), phi.grad_at_qp(q), 2 / 128)
        assert (d * sp_.jxw(q)).sum() == pytest.approx(2 * math.pi * 0.25, rel=0.05)


class TestSurfaceTension:
    def setup_method(self):
        self.mesh = build_uniform((0, 1, 0, 1), 0.125)
        self.lspace = FESpace(self.mesh, 1)
        self.vspace = FESpace(self.mesh, 2, 2)

    def test_zero_sigma(self):
        phi = interpolate(self.lspace, lambda x, y: circle(x, y, 0))
        assert surface_tension_forms(phi, 0.0, 0.1) is None
        with pytest.raises(ValueError):
            surface_tension_forms(phi, -1.0, 0.1)

    def test_far_from_interface(self):
        phi = interpolate(self.lspace, lambda x, y: 5.0 + x)
        t = surface_tension_forms(phi, 2.0, 0.1)
        mat, rhs = _tension_local(self.vspace, t, 0.1)
        assert not mat.any() and not rhs[0].any() and not rhs[1].any()

    def test_implicit_form_symmetric_psd(self):
        phi = interpolate(self.lspace, lambda x, y: circle(x, y, 0))
        t = surface_tension_forms(phi, 3.0, 0.1)
        mat, _ = _tension_local(self.vspace, t, 0.2)
        assert np.allclose(mat, mat.transpose(0, 2, 1), atol=1e-12)
        assert np.linalg.eigvalsh(mat).min() > -1e-10 * np.abs(mat).max()

    def test_normals_are_unit(self):
        phi = interpolate(self.lspace, lambda x, y: circle(x, y, 0))
        t = surface_tension_forms(phi, 1.0, 0.1)
        n = np.linalg.norm(t.normal, axis=-1)
        assert np.allclose(n[n > 0], 1.0)


def problem(phys=None, **kw):
    params = NumericalParams(r_max=0, lin_solver_rel_tol=1e-12)
    return FlowProblem(phys=phys or PhysicalParams(), params=params, adapt=False, beta=0.05, **kw)


class TestAdvance:
    def test_zero_state_stays_zero(self):
        pb = problem(dt_max=0.05)
        s = initial_state(build_uniform((0, 1, 0, 1), 0.125), pb, circle)
        for _ in range(3):
            s = advance(s, pb)
        assert not s.ns.U_n.values.any() and not s.ns.P_n.values.any()

    def test_matched_phases_decouple(self):
        phys = PhysicalParams(rho_plus=2.0, rho_minus=2.0, viscosity_plus=Constant(0.3), mu_minus=0.3)
        curl = lambda x, y: (np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y), -np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2)
        pb = problem(phys)
        s = initial_state(build_uniform((0, 1, 0, 1), 0.125), pb, circle, curl)
        ns0 = s.ns
        s1 = advance(s, pb, 0.01)
        rho = np.full(s.disc.vspace.jxw(s.disc.quad_v).shape, 2.0)
        ref, _ = ns_step(s.disc, ns0, 0.01, rho, np.full_like(rho, 0.3), 0.01)
        assert np.allclose(s1.ns.U_n.values, ref.U_n.values, atol=1e-10)

    def test_kinetic_energy_never_increases(self):
        phys = PhysicalParams(rho_plus=1.0, rho_minus=1.0, viscosity_plus=Constant(0.01), mu_minus=0.01)
        curl = lambda x, y: (np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y), -np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2)
        pb = problem(phys)
        s = initial_state(build_uniform((0, 1, 0, 1), 0.125), pb, circle, curl)
        q = s.disc.quad_v

        def energy(st_):
            u = st_.disc.velocity_at_qp(st_.ns.U_n)
            return 0.5 * float(((u ** 2).sum(-1) * st_.disc.vspace.jxw(q)).sum())

        e = [energy(s)]
        for _ in range(15):
            s = advance(s, pb)
            e.append(energy(s))
        assert all(b <= a * (1 + 1e-9) for a, b in zip(e[:-1], e[1:]))

    def test_first_step_and_ratio_cap(self):
        phys = PhysicalParams(gravity=(0.0, -1.0))
        pb = problem(phys, dt_max=0.02)
        s = initial_state(build_uniform((0, 1, 0, 1), 0.125), pb, circle)
        dt0 = choose_dt(s, pb)
        assert dt0 == pytest.approx(0.1 * 0.02)   # at rest only the cap applies, shortened
        s = advance(s, pb, dt0)
        assert choose_dt(s, pb) <= MAX_STEP_RATIO * dt0 * (1 + 1e-12)

    def test_extrapolations_exact_for_linear_in_time(self):
        vs = FESpace(build_uniform((0, 1, 0, 1), 0.5), 2, 2)
        a = np.random.default_rng(0).standard_normal(vs.n_dofs)
        b = np.random.default_rng(1).standard_normal(vs.n_dofs)
        u = lambda t: Field(vs, a + t * b)
        ns = NSState(u(0.3), u(0.1), None, None, None, 0.2)
        u0, uh, u1 = extrapolated_velocities(ns, 0.4)
        assert np.allclose(uh.values, u(0.5).values) and np.allclose(u1.values, u(0.7).values)

    def test_cross_properties_stay_bounded(self):
        phys = PhysicalParams(rho_plus=1020.0, rho_minus=1.2, viscosity_plus=SHAMPOO_NEW, mu_minus=2e-5,
                              gravity=(0.0, -9.81))
        pb = problem(phys)
        s = initial_state(build_uniform((0, 1, 0, 1), 0.125), pb, circle)
        for _ in range(5):
            s = advance(s, pb)
            m = s.materials
            assert 1.2 - 1e-9 <= m.rho.min() and m.rho.max() <= 1020 + 1e-9
            assert 2e-5 - 1e-15 <= m.mu.min() and m.mu.max() <= 5.7 + 1e-12
