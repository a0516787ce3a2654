"""Krylov solvers, preconditioners, direct fallback, and spectral estimation.

CG and MinRes are written against the SparseMatrix container so that solver
reports, stopping rules, and preconditioner hooks stay uniform across the
time-stepping schemes. The sparse direct fallback wraps SuperLU, which is
plenty for the desk-scale systems this package targets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .sparse import DimensionError, SparseMatrix


class IndefiniteMatrixError(ValueError):
    pass


class PreconditionerBreakdown(RuntimeError):
    pass


class PowerIterationError(RuntimeError):
    pass


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    wall_time: float


def weighted_norm(m: SparseMatrix, v) -> float:
    """sqrt(v^T M v) for SPD M; tiny negative round-off is clamped to zero."""
    v = np.asarray(v, dtype=np.float64)
    q = float(v @ m.matvec(v))
    vv = float(v @ v)
    if q < -1e-12 * vv:
        raise IndefiniteMatrixError(f"negative quadratic form {q:.3e} for |v|^2 = {vv:.3e}")
    return float(np.sqrt(max(q, 0.0)))


# ---------------------------------------------------------------------------
# Preconditioners
# ---------------------------------------------------------------------------

class Preconditioner:
    """Linear SPD map r -> z applied inside the Krylov iterations."""

    kind = "Identity"

    def apply(self, r):
        return r

    def __call__(self, r):
        return self.apply(r)


class IdentityPreconditioner(Preconditioner):
    kind = "Identity"


class JacobiPreconditioner(Preconditioner):
    kind = "Jacobi"

    def __init__(self, a: SparseMatrix):
        d = a.diagonal()
        if np.any(d <= 0):
            raise PreconditionerBreakdown("Jacobi: non-positive diagonal entry")
        self.inv_diag = 1.0 / d

    def apply(self, r):
        return self.inv_diag * r


class IC0Preconditioner(Preconditioner):
    """Incomplete Cholesky with zero fill-in; z = (L L^T)^{-1} r."""

    kind = "IncompleteCholesky0"

    def __init__(self, a: SparseMatrix):
        from . import kernels

        low = a.lower_triangle()
        try:
            lvals = kernels.ic0_factor(a.n_rows, low.row_offsets, low.col_indices, low.values)
        except RuntimeError as exc:
            raise PreconditionerBreakdown(str(exc)) from exc
        self._offsets = low.row_offsets
        self._cols = low.col_indices
        self._lvals = lvals

    def apply(self, r):
        from . import kernels

        z = kernels.lower_solve(self._offsets, self._cols, self._lvals, r)
        return kernels.lower_transpose_solve(self._offsets, self._cols, self._lvals, z)


class BlockSchurPreconditioner(Preconditioner):
    """Block-diagonal preconditioner for the coupled two-field system.

    The displacement block is approximated by an IC(0) solve with A, the
    pressure block by an exact factorization of the approximate Schur
    complement C_tau + D diag(A)^{-1} D^T.
    """

    kind = "BlockSchurDiagonal"

    def __init__(self, a: SparseMatrix, c_tau: SparseMatrix, d: SparseMatrix):
        self.n_u = a.n_rows
        self.n_p = c_tau.n_rows
        self._a_part = IC0Preconditioner(a)
        schur = c_tau.add(sandwich_product(d, 1.0 / a.diagonal()))
        self._schur_solver = DirectSolver(schur)

    def apply(self, r):
        z = np.empty_like(r)
        z[: self.n_u] = self._a_part.apply(r[: self.n_u])
        z[self.n_u:] = self._schur_solver.solve(r[self.n_u:])
        return z


def sandwich_product(m: SparseMatrix, w) -> SparseMatrix:
    """Sparse M * diag(w) * M^T via scipy, returned as a SparseMatrix."""
    ms = _to_scipy(m)
    prod = (ms @ scipy.sparse.diags(np.asarray(w, dtype=np.float64)) @ ms.T).tocoo()
    return SparseMatrix.from_coo(m.n_rows, m.n_rows, prod.row, prod.col, prod.data,
                                 symmetric=True)


def _to_scipy(a: SparseMatrix):
    return scipy.sparse.csr_matrix((a.values, a.col_indices, a.row_offsets),
                                   shape=(a.n_rows, a.n_cols))


# ---------------------------------------------------------------------------
# Direct solver (sparse LU, cached factorization)
# ---------------------------------------------------------------------------

class DirectSolver:
    """Cached sparse factorization for repeated solves with one matrix."""

    def __init__(self, a: SparseMatrix):
        try:
            self._lu = scipy.sparse.linalg.splu(_to_scipy(a).tocsc())
        except RuntimeError as exc:
            raise RuntimeError(f"direct factorization failed: {exc}") from exc
        self.shape = a.shape

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=np.float64))


def ldl_solve(a: SparseMatrix, b):
    """One-shot direct solve of a symmetric system (reference baseline)."""
    if a.n_rows != a.n_cols:
        raise DimensionError("ldl_solve: matrix not square")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (a.n_rows,):
        raise DimensionError("ldl_solve: right-hand side length mismatch")
    return DirectSolver(a).solve(b)


# ---------------------------------------------------------------------------
# Conjugate gradients
# ---------------------------------------------------------------------------

def cg_solve(a: SparseMatrix, b, precond: Preconditioner | None = None,
             tol: float = 1e-10, max_iter: int | None = None, callback=None,
             x0=None):
    """Preconditioned CG for SPD systems.

    Stops when ||b - A x|| / ||b|| <= tol. Returns (x, SolveReport); on
    iteration exhaustion the best iterate is returned with converged=False.
    An optional start vector x0 warm-starts the iteration.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (a.n_rows,):
        raise DimensionError("cg_solve: right-hand side length mismatch")
    if precond is None:
        precond = IdentityPreconditioner()
    if max_iter is None:
        max_iter = 10 * a.n_rows + 100
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, True, time.perf_counter() - t0)
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        r = b - a.matvec(x)
        res0 = float(np.linalg.norm(r)) / nb
        if res0 <= tol:
            return x, SolveReport(0, res0, True, time.perf_counter() - t0)
    z = precond.apply(r)
    rz = float(r @ z)
    if rz <= 0:
        raise PreconditionerBreakdown("cg: preconditioner produced non-positive r^T z")
    p = z.copy()
    it = 0
    res = 1.0
    while it < max_iter:
        ap = a.matvec(p)
        pap = float(p @ ap)
        if pap <= 0:
            raise IndefiniteMatrixError("cg: matrix is not positive definite (p^T A p <= 0)")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        it += 1
        if callback is not None:
            callback(x.copy())
        res = float(np.linalg.norm(r)) / nb
        if res <= tol:
            return x, SolveReport(it, res, True, time.perf_counter() - t0)
        z = precond.apply(r)
        rz_new = float(r @ z)
        if rz_new <= 0:
            raise PreconditionerBreakdown("cg: preconditioner produced non-positive r^T z")
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(it, res, False, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# MinRes
# ---------------------------------------------------------------------------

def minres_solve(s: SparseMatrix, b, precond: Preconditioner | None = None,
                 tol: float = 1e-10, max_iter: int | None = None, callback=None,
                 x0=None):
    """Preconditioned MinRes for symmetric (possibly indefinite) systems.

    The Lanczos recurrence follows Paige and Saunders; the preconditioner
    must be SPD. The stopping rule is the relative residual of the
    preconditioned system, sqrt(r^T P r) / sqrt(b^T P b), which weighs
    badly scaled blocks evenly; with the identity preconditioner this is
    the plain Euclidean relative residual.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (s.n_rows,):
        raise DimensionError("minres_solve: right-hand side length mismatch")
    if precond is None:
        precond = IdentityPreconditioner()
    if max_iter is None:
        max_iter = 10 * s.n_rows + 100

    def prec_norm(r):
        q = float(r @ precond.apply(r))
        if q < 0:
            raise PreconditionerBreakdown("minres: preconditioner is not positive definite")
        return np.sqrt(q)

    nbp = prec_norm(b)
    if nbp == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, True, time.perf_counter() - t0)
    if x0 is None:
        x = np.zeros_like(b)
        r1 = b.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        r1 = b - s.matvec(x)
        res0 = prec_norm(r1) / nbp
        if res0 <= tol:
            return x, SolveReport(0, res0, True, time.perf_counter() - t0)
    y = precond.apply(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise PreconditionerBreakdown("minres: preconditioner is not positive definite")
    if beta1 == 0.0:
        return x, SolveReport(0, 1.0, False, time.perf_counter() - t0)
    beta1 = np.sqrt(beta1)

    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs = -1.0
    sn = 0.0
    w = np.zeros_like(b)
    w2 = np.zeros_like(b)
    r2 = r1.copy()
    it = 0
    est_target = tol
    while it < max_iter:
        it += 1
        v = y / beta
        y = s.matvec(v)
        if it >= 2:
            y -= (beta / oldb) * r1
        alfa = float(v @ y)
        y -= (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = precond.apply(r2)
        oldb = beta
        bb = float(r2 @ y)
        if bb < 0:
            raise PreconditionerBreakdown("minres: preconditioner is not positive definite")
        beta = np.sqrt(bb)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = np.sqrt(gbar * gbar + beta * beta)
        gamma = max(gamma, np.finfo(float).eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x += phi * w
        if callback is not None:
            callback(x.copy())
        # phibar estimates the preconditioned residual of the current
        # iterate; confirm against the recomputed one, which can lag, and
        # tighten the estimate target while it does
        if phibar / nbp <= est_target:
            true_res = prec_norm(b - s.matvec(x)) / nbp
            if true_res <= tol:
                return x, SolveReport(it, true_res, True, time.perf_counter() - t0)
            est_target *= 0.1
            if est_target < 1e-16:
                break
    true_res = prec_norm(b - s.matvec(x)) / nbp
    return x, SolveReport(it, true_res, true_res <= tol, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Spectral radius via power iteration
# ---------------------------------------------------------------------------

def spectral_radius(apply, dim: int, tol: float = 1e-10, max_iter: int = 20000) -> float:
    """Power-iteration estimate of the dominant eigenvalue modulus.

    `apply` is any linear map on vectors of length `dim`. The start vector is
    deterministic (all ones, with a seeded random restart if that hits a
    kernel direction), so repeated runs give identical results.
    """
    if dim == 0:
        return 0.0
    v = np.ones(dim) / np.sqrt(dim)
    lam = 0.0
    restarts = 0
    for _ in range(max_iter):
        w = apply(v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0 or not np.isfinite(nw):
            if nw == 0.0 and restarts < 3:
                # ones may be orthogonal to the dominant eigenspace; restart
                restarts += 1
                rng = np.random.default_rng(1234 + restarts)
                v = rng.standard_normal(dim)
                v /= np.linalg.norm(v)
                if restarts == 3:
                    return 0.0
                continue
            if nw == 0.0:
                return 0.0
            raise PowerIterationError("power iteration produced a non-finite vector")
        lam_new = nw
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam = lam_new
    raise PowerIterationError(f"power iteration did not settle within {max_iter} iterations")


def spectral_radius_squared(apply, dim: int, tol: float = 1e-10, max_iter: int = 20000) -> float:
    """sqrt(rho(apply o apply)); robust when +rho and -rho are both present."""
    rho2 = spectral_radius(lambda x: apply(apply(x)), dim, tol, max_iter)
    return float(np.sqrt(rho2))
