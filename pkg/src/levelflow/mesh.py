"""Linear quadtree of axis-aligned rectangular cells.

A leaf is identified by ``(level, i, j)``: the cell of generation ``level``
whose lower-left corner sits ``i`` cells (of that generation) right of and
``j`` cells above the domain corner.  Parents and children are implicit
(``(l-1, i//2, j//2)`` and ``(l+1, 2i+a, 2j+b)``), so no pointer structure
is stored.  Leaves are kept sorted by their integer key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

# bits reserved for each of i, j inside a cell key
_IJ_BITS = 24
_MASK = (1 << _IJ_BITS) - 1
# generation of the integer lattice on which every Q1/Q2 node lives
LATTICE_LEVEL = 16

# face order: left, right, bottom, top
FACE_DIRS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def make_key(level, i, j):
    level = np.asarray(level, dtype=np.int64)
    return (level << (2 * _IJ_BITS)) | (np.asarray(i, dtype=np.int64) << _IJ_BITS) | np.asarray(j, dtype=np.int64)


def split_key(key):
    key = np.asarray(key, dtype=np.int64)
    return key >> (2 * _IJ_BITS), (key >> _IJ_BITS) & _MASK, key & _MASK


def _contains(sorted_keys: np.ndarray, keys: np.ndarray):
    """Membership test plus position of ``keys`` in a sorted key array."""
    if sorted_keys.size == 0:
        return np.zeros(np.shape(keys), dtype=bool), np.zeros(np.shape(keys), dtype=np.int64)
    pos = np.searchsorted(sorted_keys, keys)
    pos_c = np.minimum(pos, len(sorted_keys) - 1)
    found = sorted_keys[pos_c] == keys
    return found, pos_c


@dataclass(frozen=True)
class Cell:
    id: int
    level: int
    i: int
    j: int
    xlo: float
    xhi: float
    ylo: float
    yhi: float

    @property
    def generation(self) -> int:
        return self.level

    @property
    def barycenter(self) -> tuple[float, float]:
        return 0.5 * (self.xlo + self.xhi), 0.5 * (self.ylo + self.yhi)

    @property
    def diameter(self) -> float:
        return math.hypot(self.xhi - self.xlo, self.yhi - self.ylo)

    @property
    def parent(self) -> int | None:
        if self.level == 0:
            return None
        return int(make_key(self.level - 1, self.i >> 1, self.j >> 1))

    @property
    def children(self) -> tuple[int, int, int, int]:
        lv, i2, j2 = self.level + 1, 2 * self.i, 2 * self.j
        return tuple(int(make_key(lv, i2 + a, j2 + b)) for b in (0, 1) for a in (0, 1))


@dataclass(frozen=True)
class AdaptReport:
    n_refined: int = 0
    n_coarsened: int = 0
    n_balance_refinements: int = 0

    @property
    def changed(self) -> bool:
        return bool(self.n_refined or self.n_coarsened or self.n_balance_refinements)


class QuadMesh:
    """Set of quadtree leaves tiling a rectangle."""

    def __init__(self, extents, root_dims, level, i, j):
        self.extents = tuple(float(v) for v in extents)
        self.root_dims = (int(root_dims[0]), int(root_dims[1]))
        level = np.asarray(level, dtype=np.int64)
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        keys = make_key(level, i, j)
        order = np.argsort(keys, kind="stable")
        self.keys = keys[order]
        self.level = level[order]
        self.i = i[order]
        self.j = j[order]
        if self.level.size and self.level.max() >= LATTICE_LEVEL - 1:
            raise ValueError("refinement depth exceeds the node lattice")

    # ------------------------------------------------------------------ geometry
    @property
    def n_cells(self) -> int:
        return int(self.keys.size)

    @property
    def root_size(self) -> tuple[float, float]:
        x0, x1, y0, y1 = self.extents
        return (x1 - x0) / self.root_dims[0], (y1 - y0) / self.root_dims[1]

    @cached_property
    def hx(self) -> np.ndarray:
        return self.root_size[0] / (1 << self.level).astype(float)

    @cached_property
    def hy(self) -> np.ndarray:
        return self.root_size[1] / (1 << self.level).astype(float)

    @cached_property
    def xlo(self) -> np.ndarray:
        return self.extents[0] + self.i * self.hx

    @cached_property
    def ylo(self) -> np.ndarray:
        return self.extents[2] + self.j * self.hy

    @cached_property
    def barycenters(self) -> np.ndarray:
        return np.column_stack([self.xlo + 0.5 * self.hx, self.ylo + 0.5 * self.hy])

    @cached_property
    def diameters(self) -> np.ndarray:
        """h_K, the diagonal length of each cell."""
        return np.hypot(self.hx, self.hy)

    @property
    def generation(self) -> np.ndarray:
        return self.level

    @property
    def min_h(self) -> float:
        return float(self.diameters.min())

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.extents
        return (x1 - x0) * (y1 - y0)

    def cell(self, idx: int) -> Cell:
        return Cell(int(self.keys[idx]), int(self.level[idx]), int(self.i[idx]), int(self.j[idx]),
                    float(self.xlo[idx]), float(self.xlo[idx] + self.hx[idx]),
                    float(self.ylo[idx]), float(self.ylo[idx] + self.hy[idx]))

    def dims_at(self, level):
        level = np.asarray(level, dtype=np.int64)
        return self.root_dims[0] << level, self.root_dims[1] << level

    # ----------------------------------------------------------------- topology
    @cached_property
    def tree_keys(self) -> np.ndarray:
        """Sorted keys of all leaves and all of their ancestors."""
        parts = [self.keys]
        lv, ii, jj = self.level, self.i, self.j
        while True:
            sel = lv > 0
            if not sel.any():
                break
            lv, ii, jj = lv[sel] - 1, ii[sel] >> 1, jj[sel] >> 1
            k = np.unique(make_key(lv, ii, jj))
            parts.append(k)
            lv, ii, jj = split_key(k)
        return np.unique(np.concatenate(parts))

    def find_leaves(self, keys):
        """Return (found mask, leaf index) for each key."""
        return _contains(self.keys, np.asarray(keys, dtype=np.int64))

    def is_refined(self, keys) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        in_tree, _ = _contains(self.tree_keys, keys)
        is_leaf, _ = _contains(self.keys, keys)
        return in_tree & ~is_leaf

    @cached_property
    def coarser_faces(self):
        """Faces whose neighbour is one generation coarser.

        Returns ``(cell, face, coarse_cell, half)``: index of the fine leaf,
        face id in :data:`FACE_DIRS`, index of the coarse leaf across it, and
        which half (0 lower/left, 1 upper/right) of the coarse face the fine
        face covers.
        """
        cells, faces, coarse, halves = [], [], [], []
        for f, (di, dj) in enumerate(FACE_DIRS):
            ni, nj = self.i + di, self.j + dj
            nx, ny = self.dims_at(self.level)
            inside = (ni >= 0) & (nj >= 0) & (ni < nx) & (nj < ny) & (self.level > 0)
            idx = np.nonzero(inside)[0]
            nkeys = make_key(self.level[idx], ni[idx], nj[idx])
            in_tree, _ = _contains(self.tree_keys, nkeys)
            idx = idx[~in_tree]
            if idx.size == 0:
                continue
            pkeys = make_key(self.level[idx] - 1, ni[idx] >> 1, nj[idx] >> 1)
            found, pos = self.find_leaves(pkeys)
            if not found.all():
                raise RuntimeError("mesh violates the one-hanging-node rule")
            cells.append(idx)
            faces.append(np.full(idx.size, f))
            coarse.append(pos)
            along = self.j[idx] if di != 0 else self.i[idx]
            halves.append(along & 1)
        if not cells:
            e = np.zeros(0, dtype=np.int64)
            return e, e, e, e
        return tuple(np.concatenate(a) for a in (cells, faces, coarse, halves))

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Index of a leaf containing each point (closed cells, ties broken low)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x0, x1, y0, y1 = self.extents
        tol = 1e-10 * max(x1 - x0, y1 - y0)
        if (pts[:, 0] < x0 - tol).any() or (pts[:, 0] > x1 + tol).any() or \
                (pts[:, 1] < y0 - tol).any() or (pts[:, 1] > y1 + tol).any():
            raise ValueError("point outside the domain")
        dx0, dy0 = self.root_size
        fx = (pts[:, 0] - x0) / dx0
        fy = (pts[:, 1] - y0) / dy0
        out = np.full(len(pts), -1, dtype=np.int64)
        for lv in range(int(self.level.max()), -1, -1):
            todo = out < 0
            if not todo.any():
                break
            nx, ny = self.dims_at(lv)
            ii = np.clip(np.floor(fx[todo] * (1 << lv)).astype(np.int64), 0, nx - 1)
            jj = np.clip(np.floor(fy[todo] * (1 << lv)).astype(np.int64), 0, ny - 1)
            found, pos = self.find_leaves(make_key(lv, ii, jj))
            sub = np.nonzero(todo)[0]
            out[sub[found]] = pos[found]
        if (out < 0).any():
            raise RuntimeError("point location failed")
        return out

    def locate_lattice(self, I, J) -> np.ndarray:
        """Leaf containing integer lattice points (exact, ties broken low)."""
        I = np.asarray(I, dtype=np.int64)
        J = np.asarray(J, dtype=np.int64)
        out = np.full(I.shape, -1, dtype=np.int64)
        for lv in range(int(self.level.max()), -1, -1):
            todo = out < 0
            if not todo.any():
                break
            nx, ny = self.dims_at(lv)
            sh = LATTICE_LEVEL - lv
            ii = np.minimum(I[todo] >> sh, nx - 1)
            jj = np.minimum(J[todo] >> sh, ny - 1)
            found, pos = self.find_leaves(make_key(lv, ii, jj))
            sub = np.nonzero(todo)[0]
            out[sub[found]] = pos[found]
        if (out < 0).any():
            raise ValueError("lattice point outside the mesh")
        return out

    def face_balance_ok(self) -> bool:
        """True when no two face-neighbours differ by more than one generation."""
        return _balance_violations(self.level, self.i, self.j, self.root_dims, self.keys).size == 0

    def leaf_arrays(self):
        return self.level.copy(), self.i.copy(), self.j.copy()


def build_uniform(extents, h0: float) -> QuadMesh:
    """Uniform generation-0 grid of square cells with side ``h0``."""
    x0, x1, y0, y1 = (float(v) for v in extents)
    nx = (x1 - x0) / h0
    ny = (y1 - y0) / h0
    rx, ry = round(nx), round(ny)
    if rx < 1 or ry < 1 or abs(nx - rx) > 1e-12 * max(nx, 1) or abs(ny - ry) > 1e-12 * max(ny, 1):
        raise ValueError(f"h0={h0} does not divide the domain {extents}")
    ii, jj = np.meshgrid(np.arange(rx), np.arange(ry), indexing="ij")
    return QuadMesh((x0, x1, y0, y1), (rx, ry), np.zeros(ii.size, dtype=np.int64), ii.ravel(), jj.ravel())


# ---------------------------------------------------------------------- adapt

def _children(level, i, j):
    lv = np.repeat(level + 1, 4)
    a = np.tile([0, 1, 0, 1], level.size)
    b = np.tile([0, 0, 1, 1], level.size)
    return lv, np.repeat(2 * i, 4) + a, np.repeat(2 * j, 4) + b


def _tree(level, i, j, root_dims):
    m = QuadMesh.__new__(QuadMesh)
    m.root_dims = root_dims
    keys = make_key(level, i, j)
    order = np.argsort(keys)
    m.keys, m.level, m.i, m.j = keys[order], level[order], i[order], j[order]
    return m


def _balance_violations(level, i, j, root_dims, keys=None):
    """Indices of leaves that are >= 2 generations coarser than a face neighbour."""
    if keys is None:
        keys = np.sort(make_key(level, i, j))
    bad = []
    for di, dj in FACE_DIRS:
        sel = level >= 2
        lv, ni, nj = level[sel], i[sel] + di, j[sel] + dj
        nx = root_dims[0] << lv
        ny = root_dims[1] << lv
        ok = (ni >= 0) & (nj >= 0) & (ni < nx) & (nj < ny)
        lv, ni, nj = lv[ok], ni[ok], nj[ok]
        # neighbour covered by a leaf at least two generations coarser?
        for up in range(2, int(lv.max(initial=0)) + 1):
            s = lv - up >= 0
            k = make_key(lv[s] - up, ni[s] >> up, nj[s] >> up)
            found, pos = _contains(keys, k)
            bad.append(pos[found])
    if not bad:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(bad))


def adapt(mesh: QuadMesh, phi_at: Callable[[np.ndarray], np.ndarray], beta: float,
          c_r: float, c_c: float, r_max: int) -> tuple[QuadMesh, AdaptReport]:
    """Refine/coarsen leaves against the level-set thresholds.

    ``phi_at`` evaluates the level set at an (n, 2) array of points (e.g.
    ``field.evaluate``).  Refinement is iterated until no leaf below
    ``r_max`` has ``|phi(x_K)| <= beta*tanh(c_r)``; coarsening is iterated on
    sibling groups that existed before this call; a final loop refines
    coarse cells until every face satisfies the one-hanging-node rule.
    """
    thr_r = beta * math.tanh(c_r)
    thr_c = beta * math.tanh(c_c)
    dx0, dy0 = mesh.root_size
    x0, _, y0, _ = mesh.extents

    def centers(level, i, j):
        h = 1.0 / (1 << level).astype(float)
        return np.column_stack([x0 + (i + 0.5) * h * dx0, y0 + (j + 0.5) * h * dy0])

    level, i, j = mesh.leaf_arrays()
    n_ref = n_coarse = n_bal = 0
    refined_parents: list[np.ndarray] = []

    def split(flag):
        refined_parents.append(make_key(level[flag], i[flag], j[flag]))
        cl, ci, cj = _children(level[flag], i[flag], j[flag])
        keep = ~flag
        return (np.concatenate([level[keep], cl]), np.concatenate([i[keep], ci]),
                np.concatenate([j[keep], cj]))

    def balance_flags():
        keys = make_key(level, i, j)
        bad = _balance_violations(level, i, j, mesh.root_dims, np.sort(keys))
        flag = np.zeros(level.size, dtype=bool)
        if bad.size:
            # violation indices refer to sorted order
            order = np.argsort(keys)
            flag[order[bad]] = True
        return flag

    # refinement and balance interact (balance children may meet the
    # criterion), so both are iterated together to a fixed point
    while True:
        changed = False
        while True:
            idx = np.nonzero(level < r_max)[0]
            if idx.size == 0:
                break
            vals = np.abs(phi_at(centers(level[idx], i[idx], j[idx])))
            flag = np.zeros(level.size, dtype=bool)
            flag[idx[vals <= thr_r]] = True
            if not flag.any():
                break
            n_ref += int(flag.sum())
            level, i, j = split(flag)
            changed = True
        while True:
            flag = balance_flags()
            if not flag.any():
                break
            n_bal += int(flag.sum())
            level, i, j = split(flag)
            changed = True
        if not changed:
            break

    new_parents = np.unique(np.concatenate(refined_parents)) if refined_parents else np.zeros(0, np.int64)
    original_tree = mesh.tree_keys

    while True:
        sel = level > 0
        pkeys = make_key(level[sel] - 1, i[sel] >> 1, j[sel] >> 1)
        uk, counts = np.unique(pkeys, return_counts=True)
        groups = uk[counts == 4]
        if groups.size == 0:
            break
        # only groups that were present before this call, never freshly refined ones
        fresh, _ = _contains(new_parents, groups)
        existed, _ = _contains(original_tree, groups)
        groups = groups[~fresh & existed]
        if groups.size == 0:
            break
        gl, gi, gj = split_key(groups)
        cl, ci, cj = _children(gl, gi, gj)
        cvals = np.abs(phi_at(centers(cl, ci, cj))).reshape(-1, 4)
        pvals = np.abs(phi_at(centers(gl, gi, gj)))
        # the merged cell must not immediately qualify for refinement again
        ok = (cvals >= thr_c).all(axis=1) & ((pvals > thr_r) | (gl >= r_max))
        # merging must not leave a face neighbour two generations finer
        tree = _tree(level, i, j, mesh.root_dims)
        for di, dj in FACE_DIRS:
            for a in (0, 1):
                # the two children touching this face of the parent
                ci_ = 2 * gi + (a if di == 0 else (1 if di > 0 else 0))
                cj_ = 2 * gj + (a if dj == 0 else (1 if dj > 0 else 0))
                ni, nj = ci_ + di, cj_ + dj
                nx, ny = tree.dims_at(gl + 1)
                inside = (ni >= 0) & (nj >= 0) & (ni < nx) & (nj < ny)
                nk = make_key(gl + 1, np.clip(ni, 0, None), np.clip(nj, 0, None))
                ok &= ~(inside & tree.is_refined(nk))
        if not ok.any():
            break
        merge = groups[ok]
        n_coarse += int(merge.size)
        pk = np.where(level > 0, make_key(np.maximum(level - 1, 0), i >> 1, j >> 1), -1)
        drop, _ = _contains(merge, pk)
        ml, mi, mj = split_key(merge)
        level = np.concatenate([level[~drop], ml])
        i = np.concatenate([i[~drop], mi])
        j = np.concatenate([j[~drop], mj])

    while True:
        flag = balance_flags()
        if not flag.any():
            break
        n_bal += int(flag.sum())
        level, i, j = split(flag)

    report = AdaptReport(n_ref, n_coarse, n_bal)
    if not report.changed:
        return mesh, report
    return QuadMesh(mesh.extents, mesh.root_dims, level, i, j), report
