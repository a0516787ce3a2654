"""Time-stepping schemes for the semi-discrete poroelastic system.

Six schemes behind one interface: the monolithic implicit Euler step, the
four classical splittings (drained, undrained, fixed-strain, fixed-stress),
the semi-explicit Euler step, and the damped iterative scheme that mixes a
relaxation weight into every inner pressure update except the last.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import PoroSystem, effective_coupling, relaxation_factor
from .solvers import (
    BlockSchurPreconditioner,
    DirectSolver,
    IC0Preconditioner,
    JacobiPreconditioner,
    SolveReport,
    cg_solve,
    minres_solve,
    sandwich_product,
    spectral_radius_squared,
    weighted_norm,
)
from .sparse import SparseMatrix

SCHEMES = ("implicit_euler", "drained", "undrained", "fixed_strain",
           "fixed_stress", "semi_explicit", "novel_damped")
SPLIT_SCHEMES = ("drained", "undrained", "fixed_strain", "fixed_stress")


@dataclass
class StepperConfig:
    scheme: str
    tau: float
    t_end: float
    k_inner: int = 1
    gamma: float | None = None          # novel_damped; default 2/(2+omega_eff)
    inner_mode: str = "fixed"           # "fixed" or "tolerance"
    inner_tol: float = 1e-8
    solver: str = "direct"              # "direct" or "iterative"
    solver_tol: float = 1e-10
    inexact_inner_cap: int | None = None  # iteration cap for non-final sweeps
    fixed_stress_mode: str = "exact"    # "exact", "diag", "identity"
    fixed_stress_beta: float | None = None
    undrained_mode: str = "diag"        # "exact", "diag", "identity"
    undrained_beta: float | None = None
    store_states: bool = True
    state_stride: int = 1
    record_inner: bool = True
    relax_final: bool = False           # ablation switch, for diagnostics only
    blowup_guard: float = 1e12

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.k_inner < 1:
            raise ValueError("k_inner must be >= 1")
        if self.gamma is not None and not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.inner_mode not in ("fixed", "tolerance"):
            raise ValueError("inner_mode must be 'fixed' or 'tolerance'")
        if self.solver not in ("direct", "iterative"):
            raise ValueError("solver must be 'direct' or 'iterative'")


@dataclass
class SimulationTrace:
    times: np.ndarray
    u_states: list
    p_states: list
    u_norm_A: np.ndarray
    p_norm_C: np.ndarray
    p_norm_B: np.ndarray
    inner_residuals: list
    wall_time_per_step: np.ndarray
    diverged_at: int | None
    final_u: np.ndarray
    final_p: np.ndarray


# ---------------------------------------------------------------------------
# Solver plumbing shared by all schemes for one (system, tau) pair
# ---------------------------------------------------------------------------

class SolverContext:
    """Cached factorizations / preconditioners for repeated block solves."""

    def __init__(self, sys: PoroSystem, tau: float, solver="direct", tol=1e-10,
                 inexact_cap=None, fixed_stress_mode="exact", fixed_stress_beta=None,
                 undrained_mode="diag", undrained_beta=None):
        self.sys = sys
        self.tau = float(tau)
        self.solver = solver
        self.tol = tol
        self.inexact_cap = inexact_cap
        self.c_tau = sys.c_tau(tau)
        self.D = sys.D
        self.Dt = sys.Dt
        self.fixed_stress_mode = fixed_stress_mode
        self.fixed_stress_beta = fixed_stress_beta
        self.undrained_mode = undrained_mode
        self.undrained_beta = undrained_beta
        self.last_report: SolveReport | None = None
        if solver == "direct":
            self._a_direct = sys.solver_A()
            self._ct_direct = DirectSolver(self.c_tau)
        else:
            self._a_prec = IC0Preconditioner(sys.A)
            self._ct_prec = JacobiPreconditioner(self.c_tau)
        self._block = None
        self._block_solver = None
        self._block_prec = None
        self._fs = None
        self._ud = None

    # -- plain block solves --------------------------------------------------

    def solve_A(self, b, inexact=False, x0=None):
        if self.solver == "direct":
            return self._a_direct.solve(b)
        cap = self.inexact_cap if (inexact and self.inexact_cap) else None
        x, rep = cg_solve(self.sys.A, b, self._a_prec, tol=self.tol,
                          max_iter=cap, x0=x0)
        self.last_report = rep
        return x

    def solve_Ct(self, b, inexact=False, x0=None):
        if self.solver == "direct":
            return self._ct_direct.solve(b)
        cap = self.inexact_cap if (inexact and self.inexact_cap) else None
        x, rep = cg_solve(self.c_tau, b, self._ct_prec, tol=self.tol,
                          max_iter=cap, x0=x0)
        self.last_report = rep
        return x

    # -- monolithic system -----------------------------------------------------

    def block_matrix(self) -> SparseMatrix:
        """Symmetrized coupled matrix [[A, -D^T], [-D, -C_tau]].

        Negating the flow row makes the saddle-point system symmetric
        indefinite, which is what MinRes needs; the direct path uses the
        same matrix with the correspondingly negated right-hand side.
        """
        if self._block is None:
            sys = self.sys
            nu, npp = sys.n_u, sys.n_p
            n = nu + npp
            rows, cols, vals = [], [], []

            def put(m, roff, coff, scale=1.0):
                r = np.repeat(np.arange(m.n_rows, dtype=np.int64), np.diff(m.row_offsets))
                rows.append(r + roff)
                cols.append(m.col_indices + coff)
                vals.append(scale * m.values)

            put(sys.A, 0, 0)
            put(self.Dt, 0, nu, -1.0)
            put(sys.D, nu, 0, -1.0)
            put(self.c_tau, nu, nu, -1.0)
            self._block = SparseMatrix.from_coo(
                n, n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                symmetric=True)
        return self._block

    def solve_block(self, rhs_u, rhs_p, x0=None):
        """Solve the coupled implicit-Euler system for one right-hand side."""
        rhs = np.concatenate([rhs_u, -rhs_p])
        if self.solver == "direct":
            if self._block_solver is None:
                self._block_solver = DirectSolver(self.block_matrix())
            return self._block_solver.solve(rhs)
        if self._block_prec is None:
            self._block_prec = BlockSchurPreconditioner(self.sys.A, self.c_tau, self.D)
        x, rep = minres_solve(self.block_matrix(), rhs, self._block_prec,
                              tol=self.tol, x0=x0)
        self.last_report = rep
        return x

    # -- fixed-stress pressure block ------------------------------------------

    def _fixed_stress_ops(self):
        """(apply_S, solve_M22) with S the inner-matrix approximation used."""
        if self._fs is None:
            sys = self.sys
            mode = self.fixed_stress_mode
            if mode == "exact":
                if sys.n_p > 500:
                    raise ValueError("exact fixed-stress inner matrix limited to n_p <= 500")
                s_dense = np.empty((sys.n_p, sys.n_p))
                solve_a = sys.solver_A()
                for j in range(sys.n_p):
                    e = np.zeros(sys.n_p)
                    e[j] = 1.0
                    s_dense[:, j] = self.D.matvec(solve_a.solve(self.Dt.matvec(e)))
                import scipy.linalg

                m22 = self.c_tau.to_dense() + s_dense
                factors = scipy.linalg.lu_factor(m22)

                def solve_m22(b, x0=None):
                    return scipy.linalg.lu_solve(factors, b)

                def apply_s(p, s=s_dense):
                    return s @ p

                self._fs = (apply_s, solve_m22)
            else:
                if mode == "diag":
                    s_mat = sandwich_product(self.D, 1.0 / sys.A.diagonal())
                elif mode == "identity":
                    if self.fixed_stress_beta is None:
                        raise ValueError("fixed_stress_beta required for identity mode")
                    s_mat = SparseMatrix.identity(sys.n_p).scaled(self.fixed_stress_beta)
                else:
                    raise ValueError(f"unknown fixed_stress_mode {mode!r}")
                m22 = self.c_tau.add(s_mat)
                if self.solver == "direct":
                    ds = DirectSolver(m22)

                    def solve_m22(b, x0=None):
                        return ds.solve(b)
                else:
                    prec = JacobiPreconditioner(m22)

                    def solve_m22(b, x0=None, m=m22, p=prec):
                        x, _ = cg_solve(m, b, p, tol=self.tol, x0=x0)
                        return x

                def apply_s(p, s=s_mat):
                    return s.matvec(p)

                self._fs = (apply_s, solve_m22)
        return self._fs

    # -- undrained displacement block -------------------------------------------

    def _undrained_ops(self):
        """(apply_DtWD, solve_M11) with W the approximation of B^{-1}."""
        if self._ud is None:
            sys = self.sys
            mode = self.undrained_mode
            if mode == "exact":
                if max(sys.n_u, sys.n_p) > 500:
                    raise ValueError("exact undrained inner matrix limited to n <= 500")
                w_dense = np.linalg.inv(sys.B.to_dense())
                d_dense = sys.D.to_dense()
                dtwd = d_dense.T @ w_dense @ d_dense
                m11 = sys.A.to_dense() + dtwd
                import scipy.linalg

                factors = scipy.linalg.lu_factor(m11)

                def solve_m11(b, x0=None):
                    return scipy.linalg.lu_solve(factors, b)

                def apply_dtwd(u, m=dtwd):
                    return m @ u

                self._ud = (apply_dtwd, solve_m11)
            else:
                if mode == "diag":
                    w = 1.0 / sys.B.diagonal()
                elif mode == "identity":
                    if self.undrained_beta is None:
                        raise ValueError("undrained_beta required for identity mode")
                    w = np.full(sys.n_p, self.undrained_beta)
                else:
                    raise ValueError(f"unknown undrained_mode {mode!r}")
                dtwd = sandwich_product(self.Dt, w)
                m11 = sys.A.add(dtwd)
                if self.solver == "direct":
                    ds = DirectSolver(m11)

                    def solve_m11(b, x0=None):
                        return ds.solve(b)
                else:
                    prec = IC0Preconditioner(m11)

                    def solve_m11(b, x0=None, m=m11, p=prec):
                        x, _ = cg_solve(m, b, p, tol=self.tol, x0=x0)
                        return x

                def apply_dtwd(u, m=dtwd):
                    return m.matvec(u)

                self._ud = (apply_dtwd, solve_m11)
        return self._ud


def make_context(sys: PoroSystem, config: StepperConfig) -> SolverContext:
    return SolverContext(
        sys, config.tau, solver=config.solver, tol=config.solver_tol,
        inexact_cap=config.inexact_inner_cap,
        fixed_stress_mode=config.fixed_stress_mode,
        fixed_stress_beta=config.fixed_stress_beta,
        undrained_mode=config.undrained_mode,
        undrained_beta=config.undrained_beta)


def _default_context(sys, tau, ctx):
    if ctx is None:
        ctx = SolverContext(sys, tau)
    elif ctx.tau != float(tau):
        raise ValueError("solver context was built for a different step size")
    return ctx


def _block_residual(sys, ctx, f_next, r, u, p):
    ru = f_next + ctx.Dt.matvec(p) - sys.A.matvec(u)
    rp = r - sys.D.matvec(u) - ctx.c_tau.matvec(p)
    return float(np.sqrt(np.dot(ru, ru) + np.dot(rp, rp)))


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------

def implicit_euler_step(sys: PoroSystem, u_n, p_n, tau, ctx: SolverContext | None = None,
                        t_next: float | None = None):
    """One step of the coupled scheme: [[A, -D^T], [D, C_tau]] x = rhs."""
    ctx = _default_context(sys, tau, ctx)
    if t_next is None:
        t_next = tau
    x = ctx.solve_block(sys.f(t_next),
                        tau * sys.g(t_next) + sys.D.matvec(u_n) + sys.C.matvec(p_n),
                        x0=np.concatenate([u_n, p_n]))
    return x[:sys.n_u], x[sys.n_u:]


def semi_explicit_step(sys: PoroSystem, u_n, p_n, tau, ctx: SolverContext | None = None,
                       t_next: float | None = None):
    """Mechanics solve with the previous pressure, then the flow update."""
    ctx = _default_context(sys, tau, ctx)
    if t_next is None:
        t_next = tau
    f_next = sys.f(t_next)
    r = tau * sys.g(t_next) + sys.D.matvec(u_n) + sys.C.matvec(p_n)
    u = ctx.solve_A(f_next + ctx.Dt.matvec(p_n), x0=u_n)
    p = ctx.solve_Ct(r - sys.D.matvec(u), x0=p_n)
    return u, p


def damped_step(sys: PoroSystem, u_n, p_n, tau, k_inner, gamma,
                ctx: SolverContext | None = None, t_next: float | None = None,
                relax_final=False, record_inner=False, inner_iterates=None):
    """One step of the damped iterative scheme.

    K - 1 inner sweeps relax the pressure by the convex combination
    gamma * p_hat + (1 - gamma) * p; the final sweep is taken undamped
    unless the (diagnostic) relax_final flag is set.

    Returns (u, p, inner_residuals); residuals are block residual norms per
    sweep when record_inner is set, else an empty array.
    """
    ctx = _default_context(sys, tau, ctx)
    if t_next is None:
        t_next = tau
    if k_inner < 1:
        raise ValueError("k_inner must be >= 1")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    f_next = sys.f(t_next)
    r = tau * sys.g(t_next) + sys.D.matvec(u_n) + sys.C.matvec(p_n)
    p = p_n
    u = u_n
    residuals = []
    for _ in range(k_inner - 1):
        u = ctx.solve_A(f_next + ctx.Dt.matvec(p), inexact=True, x0=u)
        p_hat = ctx.solve_Ct(r - sys.D.matvec(u), inexact=True, x0=p)
        p = gamma * p_hat + (1.0 - gamma) * p
        if inner_iterates is not None:
            inner_iterates.append(p.copy())
        if record_inner:
            residuals.append(_block_residual(sys, ctx, f_next, r, u, p))
    u = ctx.solve_A(f_next + ctx.Dt.matvec(p), x0=u)
    p_hat = ctx.solve_Ct(r - sys.D.matvec(u), x0=p)
    if relax_final:
        p = gamma * p_hat + (1.0 - gamma) * p
    else:
        p = p_hat
    if inner_iterates is not None:
        inner_iterates.append(p.copy())
    if record_inner:
        residuals.append(_block_residual(sys, ctx, f_next, r, u, p))
    return u, p, np.asarray(residuals)


def damped_step_two_sweeps(sys: PoroSystem, u_n, p_n, tau, gamma,
                           ctx: SolverContext | None = None, t_next: float | None = None):
    """Explicitly unrolled K = 2 variant of damped_step (same arithmetic)."""
    ctx = _default_context(sys, tau, ctx)
    if t_next is None:
        t_next = tau
    f_next = sys.f(t_next)
    r = tau * sys.g(t_next) + sys.D.matvec(u_n) + sys.C.matvec(p_n)
    u_half = ctx.solve_A(f_next + ctx.Dt.matvec(p_n), inexact=True, x0=u_n)
    p_half = ctx.solve_Ct(r - sys.D.matvec(u_half), inexact=True, x0=p_n)
    p_mid = gamma * p_half + (1.0 - gamma) * p_n
    u = ctx.solve_A(f_next + ctx.Dt.matvec(p_mid), x0=u_half)
    p = ctx.solve_Ct(r - sys.D.matvec(u), x0=p_mid)
    return u, p


def split_iterative_step(sys: PoroSystem, scheme, u_n, p_n, tau, k_or_tol,
                         ctx: SolverContext | None = None, t_next: float | None = None,
                         record_inner=False, max_sweeps=200):
    """One step of a classical splitting scheme.

    k_or_tol is the fixed sweep count (int) or a residual tolerance (float)
    on the coupled block residual; in tolerance mode sweeping stops once the
    residual falls below it (capped at max_sweeps).

    Returns (u, p, inner_residuals).
    """
    if scheme not in SPLIT_SCHEMES:
        raise ValueError(f"scheme must be one of {SPLIT_SCHEMES}")
    ctx = _default_context(sys, tau, ctx)
    if t_next is None:
        t_next = tau
    f_next = sys.f(t_next)
    r = tau * sys.g(t_next) + sys.D.matvec(u_n) + sys.C.matvec(p_n)

    by_tolerance = isinstance(k_or_tol, float)
    n_sweeps = max_sweeps if by_tolerance else int(k_or_tol)
    track = record_inner or by_tolerance

    u, p = u_n, p_n
    residuals = []
    if scheme == "fixed_stress":
        apply_s, solve_m22 = ctx._fixed_stress_ops()
    elif scheme == "undrained":
        apply_dtwd, solve_m11 = ctx._undrained_ops()

    for _ in range(n_sweeps):
        if scheme == "drained":
            u = ctx.solve_A(f_next + ctx.Dt.matvec(p), x0=u)
            p = ctx.solve_Ct(r - sys.D.matvec(u), x0=p)
        elif scheme == "fixed_strain":
            p = ctx.solve_Ct(r - sys.D.matvec(u), x0=p)
            u = ctx.solve_A(f_next + ctx.Dt.matvec(p), x0=u)
        elif scheme == "fixed_stress":
            p = solve_m22(r + apply_s(p) - sys.D.matvec(u), p)
            u = ctx.solve_A(f_next + ctx.Dt.matvec(p), x0=u)
        else:  # undrained
            u = solve_m11(f_next + apply_dtwd(u) + ctx.Dt.matvec(p), u)
            p = ctx.solve_Ct(r - sys.D.matvec(u), x0=p)
        if track:
            res = _block_residual(sys, ctx, f_next, r, u, p)
            residuals.append(res)
            if res > 1e12:
                break
            if by_tolerance and res <= k_or_tol:
                break
    return u, p, np.asarray(residuals)


# ---------------------------------------------------------------------------
# Simulation loop
# ---------------------------------------------------------------------------

def run_simulation(sys: PoroSystem, config: StepperConfig,
                   ctx: SolverContext | None = None) -> SimulationTrace:
    """March the configured scheme from (u0, p0) to t_end, recording a trace."""
    if ctx is None:
        ctx = make_context(sys, config)
    tau = config.tau
    ratio = config.t_end / tau
    n_steps = int(round(ratio)) if ratio >= 1.0 else 0

    gamma = config.gamma
    if config.scheme == "novel_damped" and gamma is None:
        gamma = relaxation_factor(effective_coupling(sys))

    if config.inner_mode == "tolerance" and config.scheme in SPLIT_SCHEMES:
        k_or_tol: float | int = float(config.inner_tol)
    else:
        k_or_tol = config.k_inner

    u = sys.u0.copy()
    p = sys.p0.copy()
    p0_norm_c = weighted_norm(sys.C, p)
    guard = config.blowup_guard * (1.0 + p0_norm_c)

    times = [0.0]
    u_states, p_states = [], []
    u_norm_a = [weighted_norm(sys.A, u)]
    p_norm_c = [p0_norm_c]
    p_norm_b = [weighted_norm(sys.B, p)]
    inner_residuals = []
    wall_times = []
    diverged_at = None
    if config.store_states:
        u_states.append(u.copy())
        p_states.append(p.copy())

    for n in range(n_steps):
        t_next = (n + 1) * tau
        t0 = time.perf_counter()
        res = np.empty(0)
        if config.scheme == "implicit_euler":
            u, p = implicit_euler_step(sys, u, p, tau, ctx, t_next)
        elif config.scheme == "semi_explicit":
            u, p = semi_explicit_step(sys, u, p, tau, ctx, t_next)
        elif config.scheme == "novel_damped":
            u, p, res = damped_step(sys, u, p, tau, config.k_inner, gamma, ctx,
                                    t_next, relax_final=config.relax_final,
                                    record_inner=config.record_inner)
        else:
            u, p, res = split_iterative_step(sys, config.scheme, u, p, tau,
                                             k_or_tol, ctx, t_next,
                                             record_inner=config.record_inner)
        wall_times.append(time.perf_counter() - t0)
        inner_residuals.append(res)
        times.append(t_next)

        finite = bool(np.all(np.isfinite(p)) and np.all(np.isfinite(u)))
        norm_c = weighted_norm(sys.C, p) if finite else np.inf
        u_norm_a.append(weighted_norm(sys.A, u) if finite else np.inf)
        p_norm_c.append(norm_c)
        p_norm_b.append(weighted_norm(sys.B, p) if finite else np.inf)
        if config.store_states and (n + 1) % config.state_stride == 0:
            u_states.append(u.copy())
            p_states.append(p.copy())
        if not finite or norm_c > guard:
            diverged_at = n + 1
            break

    return SimulationTrace(
        times=np.asarray(times),
        u_states=u_states,
        p_states=p_states,
        u_norm_A=np.asarray(u_norm_a),
        p_norm_C=np.asarray(p_norm_c),
        p_norm_B=np.asarray(p_norm_b),
        inner_residuals=inner_residuals,
        wall_time_per_step=np.asarray(wall_times),
        diverged_at=diverged_at,
        final_u=u,
        final_p=p,
    )


def trace_to_csv(trace: SimulationTrace, path):
    """One row per recorded time: t, |u|_A, |p|_C, |p|_B, residuals, seconds."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,norm_u_A,norm_p_C,norm_p_B,inner_residuals,wall_time\n")
        for i, t in enumerate(trace.times):
            if i == 0:
                res, wt = "", ""
            else:
                res = ";".join(f"{v:.9e}" for v in trace.inner_residuals[i - 1])
                wt = f"{trace.wall_time_per_step[i - 1]:.9e}"
            fh.write(f"{t:.9e},{trace.u_norm_A[i]:.9e},{trace.p_norm_C[i]:.9e},"
                     f"{trace.p_norm_B[i]:.9e},{res},{wt}\n")


# ---------------------------------------------------------------------------
# Splitting-operator diagnostics
# ---------------------------------------------------------------------------

def damped_splitting_radius(sys: PoroSystem, tau, gamma, tol=1e-10) -> float:
    """Spectral radius of the damped splitting's iteration operator M^{-1}N.

    The operator is applied matrix-free through the cached factorizations;
    the power iteration runs on the squared operator because the extreme
    eigenvalues come in near +/- pairs when gamma is tuned optimally.
    """
    ctx = SolverContext(sys, tau)
    nu = sys.n_u

    def apply(x):
        xu, xp = x[:nu], x[nu:]
        au = ctx.solve_A(ctx.Dt.matvec(xp))
        ap = ctx.solve_Ct(-sys.D.matvec(au))
        out = np.empty_like(x)
        out[:nu] = gamma * au + (1.0 - gamma) * xu
        out[nu:] = gamma * ap + (1.0 - gamma) * xp
        return out

    return spectral_radius_squared(apply, nu + sys.n_p, tol)


def inner_recursion_check(sys: PoroSystem, tau, gamma, k_inner,
                          state=None, t_next=None) -> float:
    """Max deviation between damped_step iterates and the affine recursion.

    The damped pressure iterates satisfy p_k = S p_{k-1} + gamma * r with
    S = gamma * T + (1 - gamma) * I and T = -C_tau^{-1} D A^{-1} D^T; the
    final undamped sweep gives p_K = T p_{K-1} + r. Both sides are assembled
    densely here and compared against the actual step internals.
    """
    if state is None:
        u_n, p_n = sys.u0, sys.p0
    else:
        u_n, p_n = state
    if t_next is None:
        t_next = tau
    ctx = SolverContext(sys, tau)
    npp = sys.n_p

    # dense T and the affine shift r
    t_mat = np.empty((npp, npp))
    for j in range(npp):
        e = np.zeros(npp)
        e[j] = 1.0
        t_mat[:, j] = -ctx.solve_Ct(sys.D.matvec(ctx.solve_A(ctx.Dt.matvec(e))))
    s_mat = gamma * t_mat + (1.0 - gamma) * np.eye(npp)
    rhs_p = tau * sys.g(t_next) + sys.D.matvec(u_n) + sys.C.matvec(p_n)
    r_vec = ctx.solve_Ct(rhs_p - sys.D.matvec(ctx.solve_A(sys.f(t_next))))

    iterates = []
    damped_step(sys, u_n, p_n, tau, k_inner, gamma, ctx, t_next,
                inner_iterates=iterates)

    deviation = 0.0
    q = p_n.copy()
    for k in range(k_inner - 1):
        q = s_mat @ q + gamma * r_vec
        deviation = max(deviation, float(np.linalg.norm(iterates[k] - q)))
    q_final = t_mat @ q + r_vec
    deviation = max(deviation, float(np.linalg.norm(iterates[-1] - q_final)))
    return deviation
