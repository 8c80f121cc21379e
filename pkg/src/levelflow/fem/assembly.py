"""Quadrature-based assembly of operators and load vectors.

A kernel receives the quadrature context of the test and trial spaces and
returns integrated local matrices of shape (E, n_test, n_trial).  The
sparsity pattern of each (test, trial) pair is cached, so repeated
assembly on a fixed mesh only costs one ``bincount``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .space import FESpace, RefQuadrature, ref_quadrature


@dataclass
class QPContext:
    """Basis data of one space at the quadrature points of every cell."""

    space: FESpace
    quad: RefQuadrature
    phi: np.ndarray    # (nq, nloc)
    grad: np.ndarray   # (E, nq, nloc, 2)
    jxw: np.ndarray    # (E, nq)
    x: np.ndarray      # (E, nq, 2)


def qp_context(space: FESpace, n1d: int) -> QPContext:
    quad = ref_quadrature(space.degree, n1d)
    return QPContext(space, quad, quad.phi, space.grad_basis(quad), space.jxw(quad), space.qp_coords(quad))


class Pattern:
    """Cached CSR structure for scattering local (E, n, m) blocks."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape):
        E, n = rows.shape
        m = cols.shape[1]
        r = np.broadcast_to(rows[:, :, None], (E, n, m)).ravel()
        c = np.broadcast_to(cols[:, None, :], (E, n, m)).ravel()
        key = r * np.int64(shape[1]) + c
        uniq, self.inverse = np.unique(key, return_inverse=True)
        ur, uc = uniq // shape[1], uniq % shape[1]
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(ur, minlength=shape[0]))])
        self.indices = uc.astype(np.int32 if shape[1] < 2**31 else np.int64)
        self.nnz = uniq.size
        self.shape = shape

    def matrix(self, local: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.inverse, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


_PATTERNS: dict = {}


def pattern(test: FESpace, trial: FESpace) -> Pattern:
    key = (id(test), id(trial))
    hit = _PATTERNS.get(key)
    if hit is not None and hit[0] is test and hit[1] is trial:
        return hit[2]
    if len(_PATTERNS) > 16:
        _PATTERNS.clear()
    p = Pattern(test.cell_dofs, trial.cell_dofs, (test.n_dofs, trial.n_dofs))
    _PATTERNS[key] = (test, trial, p)
    return p


def scatter_vector(space: FESpace, local: np.ndarray) -> np.ndarray:
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.n_dofs)


def condense(A: sp.spmatrix, test: FESpace, trial: FESpace | None = None) -> sp.csr_matrix:
    """C_test^T A C_trial: eliminate hanging nodes."""
    trial = trial or test
    return (test.Cfull.T @ A @ trial.Cfull).tocsr()


def condense_vector(b: np.ndarray, space: FESpace) -> np.ndarray:
    return space.Cfull.T @ b


def assemble_bilinear(test: FESpace, kernel: Callable, trial: FESpace | None = None,
                      n1d: int | None = None, constrained: bool = True) -> sp.csr_matrix:
    """Assemble ``kernel(test_ctx, trial_ctx) -> (E, n_test, n_trial)``."""
    trial = trial or test
    n1d = n1d or max(test.degree, trial.degree) + 1
    tctx = qp_context(test, n1d)
    uctx = tctx if trial is test else qp_context(trial, n1d)
    local = kernel(tctx, uctx)
    A = pattern(test, trial).matrix(local)
    return condense(A, test, trial) if constrained else A


def assemble_linear(space: FESpace, kernel: Callable, n1d: int | None = None,
                    constrained: bool = True) -> np.ndarray:
    """Assemble ``kernel(ctx) -> (E, n_loc_dofs)``."""
    ctx = qp_context(space, n1d or space.degree + 1)
    b = scatter_vector(space, kernel(ctx))
    return condense_vector(b, space) if constrained else b


# ------------------------------------------------------------ common kernels

def _coef(coef, ctx):
    if coef is None:
        return ctx.jxw
    c = coef(ctx.x[..., 0], ctx.x[..., 1]) if callable(coef) else coef
    return np.broadcast_to(c, ctx.jxw.shape) * ctx.jxw


def mass_kernel(coef=None):
    def k(t: QPContext, u: QPContext):
        w = _coef(coef, t)
        return np.einsum("eq,qa,qb->eab", w, t.phi, u.phi, optimize=True)
    return k


def laplace_kernel(coef=None):
    def k(t: QPContext, u: QPContext):
        w = _coef(coef, t)
        return np.einsum("eq,eqad,eqbd->eab", w, t.grad, u.grad, optimize=True)
    return k


def mass_matrix(space: FESpace, constrained: bool = True) -> sp.csr_matrix:
    return assemble_bilinear(space, mass_kernel(), n1d=space.degree + 1, constrained=constrained)


def laplace_matrix(space: FESpace, constrained: bool = True) -> sp.csr_matrix:
    return assemble_bilinear(space, laplace_kernel(), n1d=space.degree + 1, constrained=constrained)


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, dofs: np.ndarray, values: np.ndarray):
    """Symmetric elimination of prescribed dofs; returns a new (A, b)."""
    A = A.tocsr()
    b = np.array(b, dtype=float)
    dofs = np.asarray(dofs, dtype=np.int64)
    if dofs.size == 0:
        return A, b
    g = np.zeros(A.shape[0])
    g[dofs] = values
    b -= A @ g
    keep = np.ones(A.shape[0])
    keep[dofs] = 0.0
    D = sp.diags(keep)
    A = (D @ A @ D).tocsr()
    diag = np.zeros(A.shape[0])
    diag[dofs] = 1.0
    A = (A + sp.diags(diag)).tocsr()
    b[dofs] = values
    return A, b
