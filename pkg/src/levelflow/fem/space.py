"""Continuous Q1/Q2 Lagrange spaces on a quadtree mesh.

Nodes live on an integer lattice (generation ``LATTICE_LEVEL`` of the root
grid), which gives every node an exact identity and exact reference
coordinates inside any cell.  Fields store a value for *every* node,
including hanging ones; after :meth:`FESpace.distribute` the hanging values
are the constraint combinations of their masters, so the field is C0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from ..mesh import FACE_DIRS, LATTICE_LEVEL, QuadMesh


# --------------------------------------------------------------- 1D basis

def lagrange_1d(degree: int, x: np.ndarray):
    """Values and derivatives of the equispaced 1D Lagrange basis on [0, 1]."""
    x = np.asarray(x, dtype=float)
    if degree == 1:
        v = np.stack([1.0 - x, x], axis=-1)
        d = np.stack([-np.ones_like(x), np.ones_like(x)], axis=-1)
    elif degree == 2:
        v = np.stack([2.0 * (x - 0.5) * (x - 1.0), -4.0 * x * (x - 1.0), 2.0 * x * (x - 0.5)], axis=-1)
        d = np.stack([4.0 * x - 3.0, 4.0 - 8.0 * x, 4.0 * x - 1.0], axis=-1)
    else:
        raise ValueError("degree must be 1 or 2")
    return v, d


def tensor_basis(degree: int, xi: np.ndarray, eta: np.ndarray):
    """2D basis at reference points; local index ``a = ix + (degree+1)*iy``.

    Returns values (..., nloc) and reference gradients (..., nloc, 2).
    """
    vx, dx = lagrange_1d(degree, xi)
    vy, dy = lagrange_1d(degree, eta)
    val = (vy[..., :, None] * vx[..., None, :]).reshape(*np.shape(xi), -1)
    gx = (vy[..., :, None] * dx[..., None, :]).reshape(*np.shape(xi), -1)
    gy = (dy[..., :, None] * vx[..., None, :]).reshape(*np.shape(xi), -1)
    return val, np.stack([gx, gy], axis=-1)


@dataclass(frozen=True)
class RefQuadrature:
    """Tensor Gauss rule on [0,1]^2 with tabulated basis values."""

    degree: int
    n1d: int
    points: np.ndarray    # (nq, 2)
    weights: np.ndarray   # (nq,)
    phi: np.ndarray       # (nq, nloc)
    dphi: np.ndarray      # (nq, nloc, 2) reference derivatives


@lru_cache(maxsize=None)
def ref_quadrature(degree: int, n1d: int) -> RefQuadrature:
    g, w = np.polynomial.legendre.leggauss(n1d)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    xi, eta = np.meshgrid(g, g, indexing="xy")
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    wts = np.outer(w, w).ravel()
    phi, dphi = tensor_basis(degree, pts[:, 0], pts[:, 1])
    for a in (pts, wts, phi, dphi):
        a.flags.writeable = False
    return RefQuadrature(degree, n1d, pts, wts, phi, dphi)


def face_local(degree: int, face: int) -> np.ndarray:
    """Local node indices on a face, ordered along increasing x or y."""
    k = degree
    r = np.arange(k + 1)
    if face == 0:
        return r * (k + 1)
    if face == 1:
        return k + r * (k + 1)
    if face == 2:
        return r
    return r + k * (k + 1)


_OPPOSITE = (1, 0, 3, 2)
SIDE_FACE = {"left": 0, "right": 1, "bottom": 2, "top": 3}


class FESpace:
    """Scalar (components=1) or vector (components=2) Lagrange space."""

    def __init__(self, mesh: QuadMesh, degree: int, components: int = 1):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.components = components
        self.nloc = (degree + 1) ** 2
        self._cache: dict = {}
        self._build_nodes()
        self._build_constraints()

    # ----------------------------------------------------------- numbering
    def _build_nodes(self):
        m, k = self.mesh, self.degree
        size = np.int64(1) << (LATTICE_LEVEL - m.level)
        I0 = m.i << (LATTICE_LEVEL - m.level)
        J0 = m.j << (LATTICE_LEVEL - m.level)
        loc = np.arange(self.nloc)
        ix, iy = loc % (k + 1), loc // (k + 1)
        step = size // k
        I = I0[:, None] + step[:, None] * ix[None, :]
        J = J0[:, None] + step[:, None] * iy[None, :]
        self.lattice_dims = (m.root_dims[0] << LATTICE_LEVEL, m.root_dims[1] << LATTICE_LEVEL)
        key = I * (self.lattice_dims[1] + 1) + J
        uniq, inv = np.unique(key.ravel(), return_inverse=True)
        self.cell_nodes = inv.reshape(key.shape).astype(np.int64)
        self.n_nodes = int(uniq.size)
        self.node_I = uniq // (self.lattice_dims[1] + 1)
        self.node_J = uniq % (self.lattice_dims[1] + 1)
        x0, x1, y0, y1 = m.extents
        self.node_coords = np.column_stack([
            x0 + (x1 - x0) * self.node_I / self.lattice_dims[0],
            y0 + (y1 - y0) * self.node_J / self.lattice_dims[1],
        ])

    def _build_constraints(self):
        k = self.degree
        cells, faces, coarse, halves = self.mesh.coarser_faces
        rows, cols, vals = [], [], []
        for f in range(4):
            sel = faces == f
            if not sel.any():
                continue
            fc, cc, hf = cells[sel], coarse[sel], halves[sel]
            fine_loc = face_local(k, f)
            coarse_loc = face_local(k, _OPPOSITE[f])
            masters = self.cell_nodes[cc][:, coarse_loc]            # (n, k+1)
            for m_ in range(k + 1):
                u2k = hf * k + m_                                    # u * 2k
                hang = u2k % 2 == 1
                if not hang.any():
                    continue
                u = u2k[hang] / (2.0 * k)
                w, _ = lagrange_1d(k, u)                             # (n, k+1)
                node = self.cell_nodes[fc[hang], fine_loc[m_]]
                rows.append(np.repeat(node, k + 1))
                cols.append(masters[hang].ravel())
                vals.append(w.ravel())
        n = self.n_nodes
        hanging = np.zeros(n, dtype=bool)
        if rows:
            r = np.concatenate(rows)
            c = np.concatenate(cols)
            v = np.concatenate(vals)
            # the same hanging node is seen from both fine cells: keep one copy
            order = np.lexsort((c, r))
            r, c, v = r[order], c[order], v[order]
            first = np.ones(r.size, dtype=bool)
            first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
            r, c, v = r[first], c[first], v[first]
            hanging[r] = True
            ident = np.nonzero(~hanging)[0]
            T = sp.csr_matrix((np.concatenate([v, np.ones(ident.size)]),
                               (np.concatenate([r, ident]), np.concatenate([c, ident]))), shape=(n, n))
            # masters may themselves be hanging on a coarser face
            while True:
                Tc = T.tocsc()
                if Tc[:, np.nonzero(hanging)[0]].nnz == 0:
                    break
                T = (T @ T).tocsr()
            T.eliminate_zeros()
        else:
            T = sp.identity(n, format="csr")
        self.hanging = hanging
        self.T = T.tocsr()
        self.free = np.nonzero(~hanging)[0]
        self.n_free = int(self.free.size)
        self.free_index = np.full(n, -1, dtype=np.int64)
        self.free_index[self.free] = np.arange(self.n_free)
        self.C = self.T[:, self.free].tocsr()

    # ------------------------------------------------------------- helpers
    @property
    def n_dofs(self) -> int:
        return self.components * self.n_nodes

    @cached_property
    def Cfull(self) -> sp.csr_matrix:
        """Constraint prolongation for all components (block diagonal)."""
        if self.components == 1:
            return self.C
        return sp.block_diag([self.C] * self.components, format="csr")

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """Global dofs per cell, component-major (``c*nloc + a``)."""
        return np.concatenate([self.cell_nodes + c * self.n_nodes for c in range(self.components)], axis=1)

    def quadrature(self, n1d: int | None = None) -> RefQuadrature:
        return ref_quadrature(self.degree, n1d or self.degree + 1)

    def qp_coords(self, quad: RefQuadrature) -> np.ndarray:
        """Physical quadrature points (E, nq, 2); read-only, cached."""
        key = ("xq", quad.n1d)
        if key not in self._cache:
            m = self.mesh
            x = m.xlo[:, None] + m.hx[:, None] * quad.points[None, :, 0]
            y = m.ylo[:, None] + m.hy[:, None] * quad.points[None, :, 1]
            xq = np.stack([x, y], axis=-1)
            xq.flags.writeable = False
            self._cache[key] = xq
        return self._cache[key]

    def jxw(self, quad: RefQuadrature) -> np.ndarray:
        key = ("jxw", quad.n1d)
        if key not in self._cache:
            m = self.mesh
            w = (m.hx * m.hy)[:, None] * quad.weights[None, :]
            w.flags.writeable = False
            self._cache[key] = w
        return self._cache[key]

    def grad_basis(self, quad: RefQuadrature) -> np.ndarray:
        """Physical basis gradients (E, nq, nloc, 2)."""
        m = self.mesh
        inv = np.stack([1.0 / m.hx, 1.0 / m.hy], axis=-1)       # (E, 2)
        return quad.dphi[None, :, :, :] * inv[:, None, None, :]

    def boundary_nodes(self, side: str) -> np.ndarray:
        if side == "left":
            mask = self.node_I == 0
        elif side == "right":
            mask = self.node_I == self.lattice_dims[0]
        elif side == "bottom":
            mask = self.node_J == 0
        elif side == "top":
            mask = self.node_J == self.lattice_dims[1]
        else:
            raise ValueError(f"unknown side {side!r}")
        return np.nonzero(mask)[0]

    def distribute(self, values: np.ndarray) -> np.ndarray:
        """Overwrite hanging values by their constraint combinations."""
        v = np.asarray(values, dtype=float).reshape(self.components, self.n_nodes)
        return np.concatenate([self.T @ v[c] for c in range(self.components)])

    def expand(self, free_values: np.ndarray) -> np.ndarray:
        return self.Cfull @ free_values

    def restrict(self, values: np.ndarray) -> np.ndarray:
        """Values at free nodes of all components."""
        v = np.asarray(values).reshape(self.components, self.n_nodes)
        return v[:, self.free].ravel()

    def same_layout(self, other: "FESpace") -> bool:
        return other.mesh is self.mesh and other.degree == self.degree and other.components == self.components


class Field:
    """Nodal values of a scalar or vector field on a space."""

    def __init__(self, space: FESpace, values=None):
        self.space = space
        if values is None:
            values = np.zeros(space.n_dofs)
        values = np.asarray(values, dtype=float).ravel()
        if values.size != space.n_dofs:
            raise ValueError("value array does not match the space")
        self.values = values

    def copy(self) -> "Field":
        return Field(self.space, self.values.copy())

    def component(self, c: int) -> np.ndarray:
        n = self.space.n_nodes
        return self.values[c * n:(c + 1) * n]

    def cell_values(self) -> np.ndarray:
        """Local nodal values (E, components*nloc)."""
        return self.values[self.space.cell_dofs]

    def at_qp(self, quad: RefQuadrature) -> np.ndarray:
        """Values at quadrature points: (E, nq) or (E, nq, 2)."""
        sp_ = self.space
        out = [self.values[sp_.cell_nodes + c * sp_.n_nodes] @ quad.phi.T for c in range(sp_.components)]
        return out[0] if sp_.components == 1 else np.stack(out, axis=-1)

    def grad_at_qp(self, quad: RefQuadrature) -> np.ndarray:
        """Gradients at quadrature points: (E, nq, 2) or (E, nq, 2comp, 2dir)."""
        sp_ = self.space
        m = sp_.mesh
        out = []
        for c in range(sp_.components):
            loc = self.values[sp_.cell_nodes + c * sp_.n_nodes]
            gx = (loc @ quad.dphi[:, :, 0].T) / m.hx[:, None]
            gy = (loc @ quad.dphi[:, :, 1].T) / m.hy[:, None]
            out.append(np.stack([gx, gy], axis=-1))
        return out[0] if sp_.components == 1 else np.stack(out, axis=-2)

    def evaluate(self, points) -> np.ndarray:
        return evaluate(self, points)

    def max_abs(self) -> float:
        if self.space.components == 1:
            return float(np.abs(self.values).max(initial=0.0))
        v = self.values.reshape(self.space.components, -1)
        return float(np.sqrt((v ** 2).sum(axis=0)).max(initial=0.0))


# ------------------------------------------------------ pointwise utilities

def interpolate(space: FESpace, func: Callable) -> Field:
    """Nodal interpolation of ``func(x, y)`` followed by constraint distribution.

    For vector spaces ``func`` returns a pair (or (2, n) array).
    """
    x, y = space.node_coords[:, 0], space.node_coords[:, 1]
    v = func(x, y)
    v = np.asarray(v, dtype=float)
    if space.components == 1:
        v = np.broadcast_to(v, x.shape)
    else:
        v = np.stack([np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in v])
    return Field(space, space.distribute(v.ravel()))


def _eval_in_cells(field: Field, cells: np.ndarray, xi: np.ndarray, eta: np.ndarray, grad=False):
    sp_ = field.space
    val, dref = tensor_basis(sp_.degree, xi, eta)
    out = []
    for c in range(sp_.components):
        loc = field.values[sp_.cell_nodes[cells] + c * sp_.n_nodes]
        if grad:
            m = sp_.mesh
            gx = (loc * dref[..., 0]).sum(-1) / m.hx[cells]
            gy = (loc * dref[..., 1]).sum(-1) / m.hy[cells]
            out.append(np.stack([gx, gy], axis=-1))
        else:
            out.append((loc * val).sum(-1))
    return out[0] if sp_.components == 1 else np.stack(out, axis=-1 if not grad else -2)


def evaluate(field: Field, points, grad: bool = False) -> np.ndarray:
    """Point values (n,) / (n, 2) of a field; ``grad`` returns gradients."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m = field.space.mesh
    cells = m.locate(pts)
    xi = np.clip((pts[:, 0] - m.xlo[cells]) / m.hx[cells], 0.0, 1.0)
    eta = np.clip((pts[:, 1] - m.ylo[cells]) / m.hy[cells], 0.0, 1.0)
    return _eval_in_cells(field, cells, xi, eta, grad)


def evaluate_at_lattice(field: Field, I: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Exact-coordinate evaluation at integer lattice points."""
    m = field.space.mesh
    cells = m.locate_lattice(I, J)
    sh = LATTICE_LEVEL - m.level[cells]
    size = (np.int64(1) << sh).astype(float)
    xi = (I - (m.i[cells] << sh)) / size
    eta = (J - (m.j[cells] << sh)) / size
    return _eval_in_cells(field, cells, xi, eta)


def integrate(obj, space: FESpace | None = None, n1d: int = 3) -> float:
    """Integral of a field, or of ``obj(x, y)`` over the mesh of ``space``."""
    if isinstance(obj, Field):
        quad = ref_quadrature(obj.space.degree, max(n1d, obj.space.degree + 1))
        vals = obj.at_qp(quad)
        jxw = obj.space.jxw(quad)
        if vals.ndim == 3:
            return (vals * jxw[..., None]).sum(axis=(0, 1))
        return float((vals * jxw).sum())
    if space is None:
        raise ValueError("a space is needed to integrate a function")
    quad = ref_quadrature(space.degree, n1d)
    xq = space.qp_coords(quad)
    vals = np.broadcast_to(np.asarray(obj(xq[..., 0], xq[..., 1]), dtype=float), xq.shape[:2])
    return float((vals * space.jxw(quad)).sum())


def transfer_field(field: Field, new_space: FESpace) -> Field:
    """Nodal interpolation of a field onto the space of an adapted mesh."""
    old = field.space
    if (old.degree, old.components) != (new_space.degree, new_space.components):
        raise ValueError("spaces differ in degree or components")
    om, nm = old.mesh, new_space.mesh
    if om.extents != nm.extents or om.root_dims != nm.root_dims:
        raise ValueError("meshes do not share the same root grid")
    if om is nm:
        return Field(new_space, field.values.copy())
    free = new_space.free
    vals = evaluate_at_lattice(field, new_space.node_I[free], new_space.node_J[free])
    full = np.zeros((new_space.components, new_space.n_nodes))
    full[:, free] = vals.T if vals.ndim == 2 else vals
    return Field(new_space, new_space.distribute(full.ravel()))
