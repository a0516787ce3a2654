"""Semi-discrete poroelastic system container and its derived scalars.

Holds the quadruple (A, B, C, D) with time-dependent loads and initial data,
plus everything computed from it: the coupling parameter of the material,
the effective (discrete) coupling, the relaxation factor, and the inner
iteration bound of the damped scheme.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .solvers import DirectSolver, spectral_radius
from .sparse import SparseMatrix, read_matrix_market, write_matrix_market


@dataclass(frozen=True)
class MaterialParams:
    """Material constants; Lame coefficients in N/m^2, permeability in m^2."""

    lam: float
    mu: float
    alpha: float
    biot_modulus: float
    permeability: float
    viscosity: float

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.lam + self.mu <= 0:
            raise ValueError("lambda + mu must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.biot_modulus <= 0 or self.permeability <= 0 or self.viscosity <= 0:
            raise ValueError("biot modulus, permeability and viscosity must be positive")

    @property
    def mobility(self):
        return self.permeability / self.viscosity


#: material sets used throughout the experiments (lambda, mu, alpha, M, kappa, nu)
WESTERLY_GRANITE = MaterialParams(1.5e10, 1.5e10, 0.47, 7.64e10, 4.0e-16, 1.0)
SHALE = MaterialParams(1.0e10, 1.0e10, 0.92, 9.5e10, 5.8e-14, 1.0)
BRAIN_MATTER = MaterialParams(5.4e4, 5.5e2, 1.0, 2.6e3, 1.6e-9, 1.0)
BRAIN_TISSUE = MaterialParams(7.8e3, 3.3e3, 1.0, 2.2e4, 1.3e-15, 8.9e-4)


# ---------------------------------------------------------------------------
# Time-dependent loads from a fixed registry (keeps systems serializable)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoadTerm:
    """One registry term: constant, sine, ramp, or indicator-scaled vector."""

    kind: str
    base: np.ndarray
    t_ramp: float = 1.0
    scale: float = 1.0

    def value(self, t):
        if self.kind in ("constant", "indicator"):
            return self.base
        if self.kind == "sine":
            return math.sin(self.scale * t) * self.base
        if self.kind == "ramp":
            return min(t / self.t_ramp, 1.0) * self.base
        raise ValueError(f"unknown load kind {self.kind!r}")

    def derivative(self, t):
        if self.kind in ("constant", "indicator"):
            return np.zeros_like(self.base)
        if self.kind == "sine":
            return self.scale * math.cos(self.scale * t) * self.base
        if self.kind == "ramp":
            return self.base / self.t_ramp if t < self.t_ramp else np.zeros_like(self.base)
        raise ValueError(f"unknown load kind {self.kind!r}")


class TimeLoad:
    """Sum of registry terms; callable t -> vector with analytic derivative."""

    def __init__(self, terms, dim=None):
        self.terms = list(terms)
        if not self.terms and dim is None:
            raise ValueError("empty TimeLoad needs an explicit dimension")
        self.dim = dim if dim is not None else self.terms[0].base.size

    def __call__(self, t):
        out = np.zeros(self.dim)
        for term in self.terms:
            out += term.value(t)
        return out

    def derivative(self, t):
        out = np.zeros(self.dim)
        for term in self.terms:
            out += term.derivative(t)
        return out


def constant_load(v):
    v = np.asarray(v, dtype=np.float64)
    return TimeLoad([LoadTerm("constant", v)])


def sine_load(v, scale=1.0):
    v = np.asarray(v, dtype=np.float64)
    return TimeLoad([LoadTerm("sine", v, scale=scale)])


def ramp_load(v, t_ramp):
    v = np.asarray(v, dtype=np.float64)
    return TimeLoad([LoadTerm("ramp", v, t_ramp=t_ramp)])


def zero_load(dim):
    return TimeLoad([], dim=dim)


# ---------------------------------------------------------------------------
# The system container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoroSystem:
    """Semi-discrete system  A u - D^T p = f,  D u' + C p' + B p = g."""

    A: SparseMatrix
    B: SparseMatrix
    C: SparseMatrix
    D: SparseMatrix
    f: TimeLoad
    g: TimeLoad
    u0: np.ndarray
    p0: np.ndarray
    dofmap: object = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_u(self):
        return self.A.n_rows

    @property
    def n_p(self):
        return self.C.n_rows

    @property
    def Dt(self):
        return self.D.transpose()

    def c_tau(self, tau) -> SparseMatrix:
        key = ("c_tau", float(tau))
        if key not in self._cache:
            self._cache[key] = self.C.add(self.B, alpha=float(tau))
        return self._cache[key]

    def solver_A(self) -> DirectSolver:
        if "solver_A" not in self._cache:
            self._cache["solver_A"] = DirectSolver(self.A)
        return self._cache["solver_A"]

    def solver_C(self) -> DirectSolver:
        if "solver_C" not in self._cache:
            self._cache["solver_C"] = DirectSolver(self.C)
        return self._cache["solver_C"]

    def validate(self, consistent=True, rng=None):
        """Shape checks, SPD spot checks, and the initial-data consistency test."""
        if rng is None:
            rng = np.random.default_rng(7)
        nu, np_ = self.n_u, self.n_p
        if self.A.shape != (nu, nu) or self.B.shape != (np_, np_) or self.C.shape != (np_, np_):
            raise ValueError("block dimensions are inconsistent")
        if self.D.shape != (np_, nu):
            raise ValueError(f"D must be {np_} x {nu}, got {self.D.shape}")
        for name, m in (("A", self.A), ("B", self.B), ("C", self.C)):
            m.validate()
            for _ in range(3):
                x = rng.standard_normal(m.n_rows)
                if x @ m.matvec(x) <= 0:
                    raise ValueError(f"{name} failed an SPD spot check")
        if self.u0.shape != (nu,) or self.p0.shape != (np_,):
            raise ValueError("initial data has wrong length")
        if consistent:
            res = consistency_residual(self)
            bound = 1e-10 * (1.0 + float(np.linalg.norm(self.f(0.0))))
            if res > bound:
                raise ValueError(f"initial data inconsistent: residual {res:.3e} > {bound:.3e}")
        return self


@dataclass(frozen=True)
class CouplingReport:
    omega_formula: float
    omega_effective: float
    gamma: float
    k_min: int


# ---------------------------------------------------------------------------
# Derived scalars
# ---------------------------------------------------------------------------

def coupling_parameter(params: MaterialParams) -> float:
    """alpha^2 M / (mu + lambda), the coupling strength of the two equations."""
    return params.alpha ** 2 * params.biot_modulus / (params.mu + params.lam)


def effective_coupling(sys: PoroSystem, tau: float | None = None, tol: float = 1e-10) -> float:
    """Spectral radius of C^{-1} D A^{-1} D^T (or with C_tau when tau is given)."""
    if sys.D.nnz == 0:
        return 0.0
    sa = sys.solver_A()
    sc = DirectSolver(sys.c_tau(tau)) if tau is not None else sys.solver_C()
    dt = sys.Dt

    def apply(x):
        return sc.solve(sys.D.matvec(sa.solve(dt.matvec(x))))

    return spectral_radius(apply, sys.n_p, tol)


def relaxation_factor(omega: float) -> float:
    """Damping weight 2 / (2 + omega) used for the inner pressure updates."""
    if omega < 0:
        raise ValueError("omega must be non-negative")
    return 2.0 / (2.0 + omega)


def iteration_bound(omega: float) -> int:
    """Smallest K >= 1 with omega^K / (2 + omega)^(K-1) < 1.

    Integer search on the inequality itself; exact ties round up to the next
    K. Guarantees first-order convergence of the damped scheme.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    if omega < 1.0:
        return 1
    k = 1
    ratio = omega  # omega^1 / (2+omega)^0
    while ratio >= 1.0:
        k += 1
        ratio *= omega / (2.0 + omega)
        if k > 10000:
            raise RuntimeError("iteration bound search did not terminate")
    return k


def iteration_bound_closed_form(omega: float) -> float:
    """Real-valued bound 1 + log(w) / (log(w+2) - log(w)); cross-check only."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    return 1.0 + math.log(omega) / (math.log(omega + 2.0) - math.log(omega))


def iteration_bound_threshold(k: int, tol: float = 1e-12) -> float:
    """Largest omega for which K = k inner iterations satisfy the bound.

    Root of omega^K = (2 + omega)^(K-1), found by bisection.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return 1.0

    def excess(w):
        return k * math.log(w) - (k - 1) * math.log(w + 2.0)

    lo, hi = 1.0, 2.0
    while excess(hi) < 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def coupling_report(sys: PoroSystem, params: MaterialParams | None = None) -> CouplingReport:
    omega_eff = effective_coupling(sys)
    omega_formula = coupling_parameter(params) if params is not None else omega_eff
    return CouplingReport(
        omega_formula=omega_formula,
        omega_effective=omega_eff,
        gamma=relaxation_factor(omega_eff),
        k_min=iteration_bound(max(omega_eff, 1e-300)),
    )


def consistency_residual(sys: PoroSystem) -> float:
    """|| A u0 - D^T p0 - f(0) ||, the elliptic constraint at t = 0."""
    r = sys.A.matvec(sys.u0) - sys.Dt.matvec(sys.p0) - sys.f(0.0)
    return float(np.linalg.norm(r))


def assumption_residual(sys: PoroSystem, fdot0=None) -> float:
    """|| B p0 - g(0) + D A^{-1} f'(0) ||, the static-pressure start condition.

    Informational: the schemes run regardless of its size.
    """
    if fdot0 is None:
        if not hasattr(sys.f, "derivative"):
            raise ValueError("pass fdot0 explicitly for loads without analytic derivative")
        fdot0 = sys.f.derivative(0.0)
    r = sys.B.matvec(sys.p0) - sys.g(0.0) + sys.D.matvec(sys.solver_A().solve(fdot0))
    return float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# Closed-form test problem (3 displacement dofs, 1 pressure dof)
# ---------------------------------------------------------------------------

def make_model_problem(omega_tilde: float) -> PoroSystem:
    """Small coupled system with a dial for the nominal coupling strength.

    A is the scaled 1D Laplacian stencil with smallest eigenvalue one,
    B = C = 1, and the coupling row is sqrt(omega_tilde)/3 * [2 1 2].
    Loads are f = (1,1,1) and g = sin(t); the initial displacement is chosen
    consistently with p0 = 1.
    """
    if omega_tilde <= 0:
        raise ValueError("omega_tilde must be positive")
    scale = 1.0 / (2.0 - math.sqrt(2.0))
    a = scale * np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]])
    A = SparseMatrix.from_dense(a, symmetric=True)
    B = SparseMatrix.from_dense([[1.0]], symmetric=True)
    C = SparseMatrix.from_dense([[1.0]], symmetric=True)
    D = SparseMatrix.from_dense(math.sqrt(omega_tilde) / 3.0 * np.array([[2.0, 1.0, 2.0]]))
    f = constant_load([1.0, 1.0, 1.0])
    g = sine_load([1.0])
    p0 = np.array([1.0])
    u0 = np.linalg.solve(a, f(0.0) + D.transpose().matvec(p0))
    return PoroSystem(A=A, B=B, C=C, D=D, f=f, g=g, u0=u0, p0=p0)


# ---------------------------------------------------------------------------
# System export / import (Matrix Market files plus a text manifest)
# ---------------------------------------------------------------------------

def _encode_load(load: TimeLoad, name, directory):
    parts = []
    for i, term in enumerate(load.terms):
        fname = f"{name}_{i}.mtx"
        write_matrix_market(term.base, os.path.join(directory, fname))
        if term.kind == "ramp":
            parts.append(f"ramp(t_ramp={term.t_ramp!r}):{fname}")
        elif term.kind == "sine":
            parts.append(f"sine(scale={term.scale!r}):{fname}")
        else:
            parts.append(f"{term.kind}:{fname}")
    return " + ".join(parts) if parts else "zero"


def _decode_load(spec, dim, directory):
    if spec == "zero":
        return zero_load(dim)
    terms = []
    for part in spec.split(" + "):
        head, fname = part.split(":")
        base = np.atleast_1d(read_matrix_market(os.path.join(directory, fname)))
        if head.startswith("ramp("):
            t_ramp = float(head[len("ramp(t_ramp="):-1])
            terms.append(LoadTerm("ramp", base, t_ramp=t_ramp))
        elif head.startswith("sine("):
            scale = float(head[len("sine(scale="):-1])
            terms.append(LoadTerm("sine", base, scale=scale))
        else:
            terms.append(LoadTerm(head, base))
    return TimeLoad(terms)


def save_system(sys: PoroSystem, directory):
    """Write the system as Matrix Market files plus manifest.txt."""
    os.makedirs(directory, exist_ok=True)
    for name in ("A", "B", "C", "D"):
        write_matrix_market(getattr(sys, name), os.path.join(directory, f"{name}.mtx"))
    write_matrix_market(sys.u0, os.path.join(directory, "u0.mtx"))
    write_matrix_market(sys.p0, os.path.join(directory, "p0.mtx"))
    if not isinstance(sys.f, TimeLoad) or not isinstance(sys.g, TimeLoad):
        raise ValueError("only registry-backed loads can be exported")
    f_spec = _encode_load(sys.f, "f", directory)
    g_spec = _encode_load(sys.g, "g", directory)
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"n_u={sys.n_u}\n")
        fh.write(f"n_p={sys.n_p}\n")
        fh.write(f"f={f_spec}\n")
        fh.write(f"g={g_spec}\n")


def load_system(directory) -> PoroSystem:
    manifest = {}
    with open(os.path.join(directory, "manifest.txt"), encoding="utf-8") as fh:
        for line in fh:
            key, _, val = line.strip().partition("=")
            manifest[key] = val
    mats = {name: read_matrix_market(os.path.join(directory, f"{name}.mtx"))
            for name in ("A", "B", "C", "D")}
    u0 = np.atleast_1d(read_matrix_market(os.path.join(directory, "u0.mtx")))
    p0 = np.atleast_1d(read_matrix_market(os.path.join(directory, "p0.mtx")))
    n_u, n_p = int(manifest["n_u"]), int(manifest["n_p"])
    return PoroSystem(
        A=mats["A"], B=mats["B"], C=mats["C"], D=mats["D"],
        f=_decode_load(manifest["f"], n_u, directory),
        g=_decode_load(manifest["g"], n_p, directory),
        u0=u0, p0=p0)


def with_initial_state(sys: PoroSystem, u0, p0) -> PoroSystem:
    return replace(sys, u0=np.asarray(u0, dtype=np.float64),
                   p0=np.asarray(p0, dtype=np.float64), _cache=sys._cache)
