import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levelflow.fem import FESpace, Field, interpolate, transfer_field
from levelflow.mesh import adapt, build_uniform, make_key, split_key


def circle_phi(cx=0.5, cy=0.5, r=0.3):
    return lambda p: r - np.hypot(p[:, 0] - cx, p[:, 1] - cy)


def face_jumps(mesh):
    """Max generation difference across faces, by probing just outside each face midpoint."""
    worst = 0
    x0, x1, y0, y1 = mesh.extents
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        px = mesh.xlo + mesh.hx * (0.5 + 0.5 * dx) + dx * 1e-9
        py = mesh.ylo + mesh.hy * (0.5 + 0.5 * dy) + dy * 1e-9
        inside = (px > x0) & (px < x1) & (py > y0) & (py < y1)
        nb = mesh.locate(np.column_stack([px[inside], py[inside]]))
        worst = max(worst, int(np.abs(mesh.level[inside] - mesh.level[nb]).max(initial=0)))
    return worst


class TestBuildUniform:
    def test_four_cells(self):
        m = build_uniform((0, 1, 0, 1), 0.5)
        assert m.n_cells == 4 and (m.generation == 0).all()

    def test_rotating_circle_grid(self):
        m = build_uniform((-1, 1, -1, 1), 0.015625)
        assert m.root_dims == (128, 128) and m.n_cells == 128 * 128

    def test_bubble_grid(self):
        m = build_uniform((0, 1, 0, 2), 0.03125)
        assert m.root_dims == (32, 64)

    def test_diameter_is_diagonal(self):
        m = build_uniform((0, 1, 0, 1), 0.25)
        assert m.min_h == pytest.approx(0.25 * math.sqrt(2), rel=1e-14)
        assert m.cell(0).diameter == pytest.approx(0.25 * math.sqrt(2), rel=1e-14)

    def test_not_divisible(self):
        with pytest.raises(ValueError, match="divide"):
            build_uniform((0, 1, 0, 1), 0.3)

    def test_key_round_trip(self):
        k = make_key(3, 17, 5)
        assert tuple(int(v) for v in split_key(k)) == (3, 17, 5)


class TestAdapt:
    def test_constant_far_field_coarsens_fully(self):
        m = build_uniform((0, 1, 0, 1), 0.25)
        m, _ = adapt(m, lambda p: np.zeros(len(p)), 0.01, 2.0, 2.0, 2)
        assert m.generation.max() == 2
        m, rep = adapt(m, lambda p: np.ones(len(p)), 0.01, 2.0, 2.0, 2)
        assert (m.generation == 0).all() and m.n_cells == 16
        assert rep.n_coarsened > 0 and rep.n_refined == 0

    def test_zero_refines_everything(self):
        m = build_uniform((0, 1, 0, 1), 0.25)
        m, rep = adapt(m, lambda p: np.zeros(len(p)), 0.01, 2.0, 2.0, 2)
        assert (m.generation == 2).all() and m.n_cells == 16 * 16

    def test_generation_capped(self):
        m = build_uniform((0, 1, 0, 1), 0.125)
        for _ in range(4):
            m, _ = adapt(m, circle_phi(), 0.02, 2.0, 2.0, 2)
        assert m.generation.max() == 2

    def test_circle_band_matches_brute_force(self):
        beta, r_max = 0.125 / 4, 2
        m = build_uniform((0, 1, 0, 1), 0.125)
        phi = circle_phi()
        m, _ = adapt(m, phi, beta, 2.0, 2.0, r_max)
        thr = beta * math.tanh(2.0)
        # no leaf below r_max may still satisfy the refinement test
        below = m.generation < r_max
        assert not (np.abs(phi(m.barycenters[below])) <= thr).any()
        # and every leaf that passes it has been split down to r_max
        near = np.abs(phi(m.barycenters)) <= thr
        assert near.any() and (m.generation[near] == r_max).all()
        assert m.min_h == pytest.approx(0.125 * math.sqrt(2) / 4)

    def test_idempotent(self):
        m = build_uniform((0, 1, 0, 1), 0.125)
        m, _ = adapt(m, circle_phi(), 0.03, 2.0, 2.0, 2)
        m2, rep = adapt(m, circle_phi(), 0.03, 2.0, 2.0, 2)
        assert not rep.changed
        assert m2.n_cells == m.n_cells

    @settings(max_examples=25, deadline=None)
    @given(cx=st.floats(0.2, 0.8), cy=st.floats(0.2, 0.8), r=st.floats(0.05, 0.3),
           beta=st.floats(0.005, 0.05), r_max=st.integers(1, 3))
    def test_balance_and_tiling(self, cx, cy, r, beta, r_max):
        m = build_uniform((0, 1, 0, 1), 0.125)
        m, _ = adapt(m, circle_phi(cx, cy, r), beta, 2.0, 2.0, r_max)
        assert face_jumps(m) <= 1
        assert m.generation.max() <= r_max
        assert (m.hx * m.hy).sum() == pytest.approx(1.0, rel=1e-12)
        # move the circle and coarsen part of the band
        m, _ = adapt(m, circle_phi(1 - cx, 1 - cy, r), beta, 2.0, 2.0, r_max)
        assert face_jumps(m) <= 1
        assert (m.hx * m.hy).sum() == pytest.approx(1.0, rel=1e-12)


class TestTransfer:
    def _pair(self):
        m0 = build_uniform((0, 1, 0, 1), 0.25)
        m1, _ = adapt(m0, circle_phi(0.4, 0.5, 0.2), 0.02, 2.0, 2.0, 2)
        return m0, m1

    def test_constant(self):
        m0, m1 = self._pair()
        f = interpolate(FESpace(m0, 1), lambda x, y: 3.5 + 0 * x)
        g = transfer_field(f, FESpace(m1, 1))
        assert np.abs(g.values - 3.5).max() < 1e-14

    def test_linear_exact_q1(self):
        m0, m1 = self._pair()
        f = interpolate(FESpace(m0, 1), lambda x, y: x + y)
        g = transfer_field(f, FESpace(m1, 1))
        X = g.space.node_coords
        assert np.abs(g.values - X.sum(1)).max() < 1e-12

    def test_quadratic_exact_q2(self):
        m0, m1 = self._pair()
        f = interpolate(FESpace(m0, 2), lambda x, y: x * x - x * y + 2 * y * y)
        g = transfer_field(f, FESpace(m1, 2))
        x, y = g.space.node_coords.T
        assert np.abs(g.values - (x * x - x * y + 2 * y * y)).max() < 1e-12

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_refine_then_coarsen_round_trip(self, seed):
        m0 = build_uniform((0, 1, 0, 1), 0.25)
        V0 = FESpace(m0, 1)
        vals = np.random.default_rng(seed).normal(size=V0.n_nodes)
        f = Field(V0, V0.distribute(vals))
        m1, _ = adapt(m0, circle_phi(0.4, 0.5, 0.2), 0.02, 2.0, 2.0, 2)
        g = transfer_field(f, FESpace(m1, 1))
        m2, _ = adapt(m1, lambda p: np.ones(len(p)), 0.02, 2.0, 2.0, 2)
        assert m2.n_cells == m0.n_cells
        back = transfer_field(g, FESpace(m2, 1))
        assert np.abs(back.values - f.values).max() < 1e-12
