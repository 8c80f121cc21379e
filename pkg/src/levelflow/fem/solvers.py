"""Linear solvers: Jacobi-CG, diagonally scaled GMRES, and cached LU."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (relative residual {residual:.3e})"
        super().__init__(message)


def has_constant_nullspace(A: sp.spmatrix, rtol: float = 1e-10) -> bool:
    """True when constants lie in the kernel of A (e.g. pure Neumann)."""
    one = np.ones(A.shape[1])
    scale = abs(A).sum(axis=1).max()
    if scale == 0:
        return True
    return float(np.abs(A @ one).max()) <= rtol * float(scale)


def _rel_residual(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return r / nb if nb > 0 else r


def _project(b):
    return b - b.mean()


def solve_spd(A, b, tol: float = 1e-8, max_iter: int = 10000) -> np.ndarray:
    """Jacobi-preconditioned CG; singular (constant kernel) systems are pinned to mean zero."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    singular = has_constant_nullspace(A)
    if singular:
        b = _project(b)
    if not np.any(b):
        return np.zeros_like(b)
    d = A.diagonal()
    d = np.where(d > 0, d, 1.0)
    M = sp.diags(1.0 / d)
    x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=max_iter, M=M)
    res = _rel_residual(A, x, b)
    if info != 0 and res > tol * 10:
        raise SolverError("CG did not converge", res)
    if singular:
        x = x - x.mean()
    return x


def solve_general(A, b, tol: float = 1e-8, max_iter: int = 10000, restart: int = 50) -> np.ndarray:
    """Restarted GMRES on the left-diagonally-scaled system D^-1 A x = D^-1 b."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    singular = has_constant_nullspace(A)
    if singular:
        b = _project(b)
    if not np.any(b):
        return np.zeros_like(b)
    d = A.diagonal()
    d = np.where(d != 0, d, 1.0)
    Dinv = sp.diags(1.0 / d)
    As, bs = (Dinv @ A).tocsr(), Dinv @ b
    x, info = spla.gmres(As, bs, rtol=tol, atol=0.0, restart=restart, maxiter=max_iter)
    res = _rel_residual(A, x, b)
    if info != 0 and res > tol * 10:
        raise SolverError("GMRES did not converge", res)
    if singular:
        x = x - x.mean()
    return x


class DirectSolver:
    """Sparse LU factorization reused across right-hand sides.

    Singular symmetric operators with a constant kernel are handled by
    projecting the right-hand side onto the range (zero mean) and fixing
    the first unknown; the result is shifted to mean zero.
    """

    def __init__(self, A, singular: bool | None = None):
        A = sp.csc_matrix(A)
        self.n = A.shape[0]
        self.singular = has_constant_nullspace(A) if singular is None else singular
        if self.singular:
            A = A[1:, 1:]
        self._lu = spla.splu(A.tocsc())

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if not self.singular:
            x = self._lu.solve(b)
        else:
            b = _project(b)
            x = np.zeros(self.n)
            x[1:] = self._lu.solve(b[1:])
            x -= x.mean()
        if not np.all(np.isfinite(x)):
            raise SolverError("direct solve produced non-finite values")
        return x

    __call__ = solve
