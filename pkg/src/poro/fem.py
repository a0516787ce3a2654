"""P2-P1 triangular finite elements for the two-field poroelastic forms.

Displacements are continuous piecewise quadratics (vertex plus edge-midpoint
nodes, two components each), pressures continuous piecewise linears. The
four bilinear forms are

    a(u,v) = int 2 mu eps(u):eps(v) + lambda (div u)(div v)
    b(p,q) = int (kappa/nu) grad p . grad q   (+ Robin boundary mass)
    c(p,q) = int (1/M) p q
    d(u,q) = int alpha (div u) q

assembled with a fixed symmetric 6-point triangle rule that integrates
polynomials of total degree <= 4 exactly. Dirichlet constraints are
eliminated symmetrically; inhomogeneous values are lifted into the loads,
which keeps A, B, C positive definite and D of full row rank.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import MaterialParams, PoroSystem, constant_load
from .solvers import DirectSolver
from .sparse import SparseMatrix


class MeshError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Quadrature and reference bases
# ---------------------------------------------------------------------------

# 6-point symmetric rule, exact for degree <= 4; weights sum to one and are
# multiplied by the physical triangle area.
_QA = 0.445948490915965
_QB = 0.091576213509771
_QWA = 0.223381589678011
_QWB = 0.109951743655322
TRI_QW = np.array([_QWA, _QWA, _QWA, _QWB, _QWB, _QWB])
_TRI_BARY = np.array([
    [1 - 2 * _QA, _QA, _QA],
    [_QA, 1 - 2 * _QA, _QA],
    [_QA, _QA, 1 - 2 * _QA],
    [1 - 2 * _QB, _QB, _QB],
    [_QB, 1 - 2 * _QB, _QB],
    [_QB, _QB, 1 - 2 * _QB],
])
TRI_QP = _TRI_BARY[:, 1:]  # reference coordinates (xi, eta)

# 3-point Gauss rule on [0, 1], exact for degree <= 5 edge integrands
EDGE_QP = 0.5 + 0.5 * np.array([-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)])
EDGE_QW = 0.5 * np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def _p1_basis(bary):
    return bary.copy()  # (nq, 3)


def _p2_basis(bary):
    l1, l2, l3 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.stack([
        l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1),
        4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1,
    ], axis=1)  # (nq, 6)


def _p2_grad_ref(bary):
    """Reference gradients of the six quadratic shape functions, (nq, 6, 2)."""
    l1, l2, l3 = bary[:, 0], bary[:, 1], bary[:, 2]
    z = np.zeros_like(l1)
    gx = np.stack([-(4 * l1 - 1), 4 * l2 - 1, z, 4 * (l1 - l2), 4 * l3, -4 * l3], axis=1)
    gy = np.stack([-(4 * l1 - 1), z, 4 * l3 - 1, -4 * l2, 4 * l2, 4 * (l1 - l3)], axis=1)
    return np.stack([gx, gy], axis=2)


_P1_AT_QP = _p1_basis(_TRI_BARY)
_P2_AT_QP = _p2_basis(_TRI_BARY)
_P2_GRAD_REF = _p2_grad_ref(_TRI_BARY)
_P1_GRAD_REF = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

# quadratic trace basis on an edge parametrized by s in [0, 1];
# nodes are the two endpoints and the midpoint
def _edge_p2(s):
    return np.stack([2 * (s - 0.5) * (s - 1.0), 2 * s * (s - 0.5), 4 * s * (1 - s)], axis=1)


def _edge_p1(s):
    return np.stack([1.0 - s, s], axis=1)


_EDGE_P2 = _edge_p2(EDGE_QP)
_EDGE_P1 = _edge_p1(EDGE_QP)


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------

@dataclass
class TriMesh:
    """Triangulation with counterclockwise triangles and marked boundary.

    Boundary edges are stored with the domain on their left, so the outward
    normal of edge (a, b) is (b - a) rotated by -90 degrees.
    """

    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3) int
    boundary_edges: list          # [(v0, v1, marker), ...]

    _edges: np.ndarray = field(default=None, repr=False)
    _tri_edges: np.ndarray = field(default=None, repr=False)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def areas(self):
        v = self.vertices
        t = self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_table(self):
        """Unique edges as sorted vertex pairs; also per-triangle edge ids.

        Local edge k of a triangle joins local vertices (k, (k+1) % 3).
        """
        if self._edges is None:
            t = self.triangles
            raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            raw = np.sort(raw, axis=1)
            edges, inverse = np.unique(raw, axis=0, return_inverse=True)
            self._edges = edges
            self._tri_edges = inverse.reshape(3, self.n_triangles).T
        return self._edges, self._tri_edges

    def edge_index(self):
        edges, _ = self.edge_table()
        return {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}

    def validate(self):
        if np.any(self.areas() <= 0):
            raise MeshError("mesh contains a degenerate or clockwise triangle")
        edges, _ = self.edge_table()
        counts = {}
        t = self.triangles
        raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        for a, b in np.sort(raw, axis=1):
            counts[(int(a), int(b))] = counts.get((int(a), int(b)), 0) + 1
        boundary = {k for k, c in counts.items() if c == 1}
        marked = [tuple(sorted((v0, v1))) for v0, v1, _ in self.boundary_edges]
        if len(marked) != len(set(marked)):
            raise MeshError("a boundary edge is marked more than once")
        if set(marked) != boundary:
            raise MeshError("markers do not cover the boundary exactly")
        # each boundary vertex must have degree two: closed loops
        deg = {}
        for v0, v1, _ in self.boundary_edges:
            deg[v0] = deg.get(v0, 0) + 1
            deg[v1] = deg.get(v1, 0) + 1
        if any(d != 2 for d in deg.values()):
            raise MeshError("boundary edges do not form closed loops")
        return self


def make_unit_square_mesh(n: int) -> TriMesh:
    """Structured unit-square mesh with 2 n^2 triangles, marker 'boundary'."""
    if n < 2:
        raise MeshError("n must be >= 2")
    xs = np.linspace(0.0, 1.0, n + 1)
    xv, yv = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.stack([xv.ravel(), yv.ravel()], axis=1)

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    boundary = []
    for i in range(n):
        boundary.append((vid(i, 0), vid(i + 1, 0), "boundary"))          # bottom
        boundary.append((vid(n, i), vid(n, i + 1), "boundary"))          # right
        boundary.append((vid(n - i, n), vid(n - i - 1, n), "boundary"))  # top
        boundary.append((vid(0, n - i), vid(0, n - i - 1), "boundary"))  # left
    return TriMesh(vertices, np.asarray(tris, dtype=np.int64), boundary).validate()


def make_annulus_mesh(r_in: float, r_out: float, n: int) -> TriMesh:
    """Polygonal annulus with 8n angular segments; outer marker 'outer',
    inner marker 'inner'. Radial layers are chosen to keep triangles close
    to isotropic (helps the discrete maximum principle for the pressure)."""
    if not 0 < r_in < r_out:
        raise MeshError("need 0 < r_in < r_out")
    if n < 1:
        raise MeshError("n must be >= 1")
    na = 8 * n
    dtheta = 2.0 * math.pi / na
    arc = 0.5 * (r_in + r_out) * dtheta
    nr = max(2, int(round((r_out - r_in) / arc)))
    radii = np.linspace(r_in, r_out, nr + 1)
    theta = np.arange(na) * dtheta
    vertices = np.empty(((nr + 1) * na, 2))
    for j, r in enumerate(radii):
        vertices[j * na:(j + 1) * na, 0] = r * np.cos(theta)
        vertices[j * na:(j + 1) * na, 1] = r * np.sin(theta)

    def vid(j, i):
        return j * na + (i % na)

    tris = []
    for j in range(nr):
        for i in range(na):
            a, b = vid(j, i), vid(j, i + 1)
            c, d = vid(j + 1, i + 1), vid(j + 1, i)
            tris.append((a, c, b))
            tris.append((a, d, c))
    boundary = []
    for i in range(na):
        boundary.append((vid(0, i + 1), vid(0, i), "inner"))    # clockwise: domain left
        boundary.append((vid(nr, i), vid(nr, i + 1), "outer"))  # counterclockwise
    return TriMesh(vertices, np.asarray(tris, dtype=np.int64), boundary).validate()


def is_delaunay(mesh: TriMesh, tol=1e-12) -> bool:
    """Opposite-angle criterion on interior edges (needed for the discrete
    maximum principle of the pressure Laplacian)."""
    v = mesh.vertices
    t = mesh.triangles
    angles = {}
    for k in range(mesh.n_triangles):
        for loc in range(3):
            a, b, c = t[k, loc], t[k, (loc + 1) % 3], t[k, (loc + 2) % 3]
            # angle at vertex c, opposite edge (a, b)
            e1 = v[a] - v[c]
            e2 = v[b] - v[c]
            cosang = float(e1 @ e2) / (np.linalg.norm(e1) * np.linalg.norm(e2))
            ang = math.acos(min(1.0, max(-1.0, cosang)))
            key = (min(a, b), max(a, b))
            angles.setdefault(key, []).append(ang)
    for key, vals in angles.items():
        if len(vals) == 2 and vals[0] + vals[1] > math.pi + tol:
            return False
    return True


# ---------------------------------------------------------------------------
# Boundary conditions and degrees of freedom
# ---------------------------------------------------------------------------

@dataclass
class BoundarySpec:
    """Per-marker conditions.

    displacement: ('fixed',) | ('dirichlet', fn(x, y) -> (ux, uy))
                  | ('traction', fn(x, y, nx, ny) -> (tx, ty))
    pressure:     ('dirichlet', value or fn(x, y)) | ('robin', conductance,
                  exterior_pressure) | ('noflux',)
    """

    displacement: dict
    pressure: dict

    def check_markers(self, mesh: TriMesh):
        markers = {m for _, _, m in mesh.boundary_edges}
        for name, table in (("displacement", self.displacement), ("pressure", self.pressure)):
            missing = markers - set(table)
            if missing:
                raise MeshError(f"{name} condition missing for markers {sorted(missing)}")


def fixed_boundary(mesh: TriMesh, pressure="dirichlet", value=0.0) -> BoundarySpec:
    """Homogeneous Dirichlet conditions on every marker (test helper)."""
    markers = {m for _, _, m in mesh.boundary_edges}
    disp = {m: ("fixed",) for m in markers}
    if pressure == "dirichlet":
        pres = {m: ("dirichlet", value) for m in markers}
    else:
        pres = {m: ("noflux",) for m in markers}
    return BoundarySpec(disp, pres)


@dataclass
class DofMap:
    """Global numbering: P2 scalar nodes are vertices then edge midpoints;
    displacement dof of node i, component c is 2 i + c. Pressure dofs are
    the vertices."""

    mesh: TriMesh
    n_disp_full: int
    n_pres_full: int
    disp_free: np.ndarray
    pres_free: np.ndarray
    disp_values: np.ndarray       # full-length, zero on free dofs
    pres_values: np.ndarray
    disp_free_map: np.ndarray     # full -> reduced index or -1
    pres_free_map: np.ndarray
    node_coords: np.ndarray       # (n_nodes, 2) coordinates of P2 nodes

    @property
    def n_u(self):
        return self.disp_free.size

    @property
    def n_p(self):
        return self.pres_free.size

    def expand_u(self, u_red):
        full = self.disp_values.copy()
        full[self.disp_free] = u_red
        return full

    def expand_p(self, p_red):
        full = self.pres_values.copy()
        full[self.pres_free] = p_red
        return full

    def restrict_u(self, u_full):
        return np.asarray(u_full)[self.disp_free]

    def restrict_p(self, p_full):
        return np.asarray(p_full)[self.pres_free]


def build_dofmap(mesh: TriMesh, bc: BoundarySpec) -> DofMap:
    bc.check_markers(mesh)
    edges, _ = mesh.edge_table()
    nv, ne = mesh.n_vertices, edges.shape[0]
    n_nodes = nv + ne
    node_coords = np.concatenate([
        mesh.vertices,
        0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]),
    ])
    n_disp_full = 2 * n_nodes
    n_pres_full = nv

    edge_ids = mesh.edge_index()
    disp_fixed = np.zeros(n_disp_full, dtype=bool)
    pres_fixed = np.zeros(n_pres_full, dtype=bool)
    disp_values = np.zeros(n_disp_full)
    pres_values = np.zeros(n_pres_full)

    for v0, v1, marker in mesh.boundary_edges:
        dspec = bc.displacement[marker]
        pspec = bc.pressure[marker]
        mid = nv + edge_ids[tuple(sorted((v0, v1)))]
        if dspec[0] in ("fixed", "dirichlet"):
            fn = dspec[1] if dspec[0] == "dirichlet" else None
            for node in (v0, v1, mid):
                x, y = node_coords[node]
                val = fn(x, y) if fn is not None else (0.0, 0.0)
                disp_fixed[2 * node] = True
                disp_fixed[2 * node + 1] = True
                disp_values[2 * node] = val[0]
                disp_values[2 * node + 1] = val[1]
        if pspec[0] == "dirichlet":
            val = pspec[1]
            for node in (v0, v1):
                x, y = mesh.vertices[node]
                pres_fixed[node] = True
                pres_values[node] = val(x, y) if callable(val) else float(val)

    disp_values[~disp_fixed] = 0.0
    pres_values[~pres_fixed] = 0.0
    disp_free = np.flatnonzero(~disp_fixed)
    pres_free = np.flatnonzero(~pres_fixed)
    disp_free_map = np.full(n_disp_full, -1, dtype=np.int64)
    disp_free_map[disp_free] = np.arange(disp_free.size)
    pres_free_map = np.full(n_pres_full, -1, dtype=np.int64)
    pres_free_map[pres_free] = np.arange(pres_free.size)
    return DofMap(mesh, n_disp_full, n_pres_full, disp_free, pres_free,
                  disp_values, pres_values, disp_free_map, pres_free_map,
                  node_coords)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _geometry(mesh: TriMesh):
    v = mesh.vertices
    t = mesh.triangles
    j11 = v[t[:, 1], 0] - v[t[:, 0], 0]
    j21 = v[t[:, 1], 1] - v[t[:, 0], 1]
    j12 = v[t[:, 2], 0] - v[t[:, 0], 0]
    j22 = v[t[:, 2], 1] - v[t[:, 0], 1]
    det = j11 * j22 - j12 * j21
    # inverse transpose of the Jacobian, row-wise
    invjt = np.empty((mesh.n_triangles, 2, 2))
    invjt[:, 0, 0] = j22 / det
    invjt[:, 0, 1] = -j21 / det
    invjt[:, 1, 0] = -j12 / det
    invjt[:, 1, 1] = j11 / det
    return invjt, 0.5 * det


def _p2_phys_grad(invjt):
    # (nt, nq, 6, 2): physical gradients of the quadratic basis
    return np.einsum("tdr,qir->tqid", invjt, _P2_GRAD_REF)


def _tri_nodes(mesh: TriMesh):
    """(nt, 6) global P2 scalar node ids: vertices then edge midpoints."""
    edges, tri_edges = mesh.edge_table()
    nv = mesh.n_vertices
    return np.concatenate([mesh.triangles, nv + tri_edges], axis=1)


def assemble(mesh: TriMesh, params: MaterialParams, bc: BoundarySpec,
             f_vol=None, g_src=None) -> PoroSystem:
    """Assemble the reduced semi-discrete system for the given conditions.

    f_vol(x, y) -> (fx, fy) and g_src(x, y) -> float are optional volumetric
    loads; boundary data (tractions, Robin terms, lifted Dirichlet values)
    is folded into the constant part of the load vectors. Initial data is
    zero; use neutral_state to compute a stationary start.
    """
    mesh.validate()
    dofmap = build_dofmap(mesh, bc)
    return _assemble_on(dofmap, params, bc, f_vol, g_src)


def _assemble_on(dofmap: DofMap, params: MaterialParams, bc: BoundarySpec,
                 f_vol=None, g_src=None) -> PoroSystem:
    mesh = dofmap.mesh
    invjt, area = _geometry(mesh)
    if np.any(area <= 0):
        raise MeshError("degenerate triangle in assembly")
    grad2 = _p2_phys_grad(invjt)              # (nt, nq, 6, 2)
    grad1 = np.einsum("tdr,ir->tid", invjt, _P1_GRAD_REF)  # (nt, 3, 2)
    nodes6 = _tri_nodes(mesh)                 # (nt, 6)
    tris = mesh.triangles
    nt = mesh.n_triangles
    mu, lam, alpha = params.mu, params.lam, params.alpha
    mob, invm = params.mobility, 1.0 / params.biot_modulus

    # Voigt strain operator rows (exx, eyy, gxy) for the 12 local dofs;
    # local dof 2 i + c is node i, component c.
    bmat = np.zeros((nt, len(TRI_QW), 3, 12))
    gx = grad2[:, :, :, 0]
    gy = grad2[:, :, :, 1]
    bmat[:, :, 0, 0::2] = gx
    bmat[:, :, 1, 1::2] = gy
    bmat[:, :, 2, 0::2] = gy
    bmat[:, :, 2, 1::2] = gx
    dmat = np.array([[2 * mu, 0, 0], [0, 2 * mu, 0], [0, 0, mu]], dtype=np.float64)
    dmat[:2, :2] += lam
    a_elem = np.einsum("q,tqai,ab,tqbj->tij", TRI_QW, bmat, dmat, bmat, optimize=True)
    a_elem *= area[:, None, None]
    # the contraction order is not symmetry-preserving in floating point
    a_elem = 0.5 * (a_elem + np.swapaxes(a_elem, 1, 2))

    # flow stiffness (P1, constant gradients) and pressure mass
    b_elem = mob * area[:, None, None] * np.einsum("tid,tjd->tij", grad1, grad1)
    c_elem = invm * area[:, None, None] * np.einsum("q,qi,qj->ij", TRI_QW, _P1_AT_QP, _P1_AT_QP)

    # coupling: alpha * div(u) against the linear pressure basis
    div = bmat[:, :, 0, :] + bmat[:, :, 1, :]   # (nt, nq, 12)
    d_elem = alpha * area[:, None, None] * np.einsum("q,qi,tqj->tij", TRI_QW, _P1_AT_QP, div)

    # scatter indices
    disp_idx = np.empty((nt, 12), dtype=np.int64)
    disp_idx[:, 0::2] = 2 * nodes6
    disp_idx[:, 1::2] = 2 * nodes6 + 1
    pres_idx = tris

    rows_a = np.repeat(disp_idx, 12, axis=1).ravel()
    cols_a = np.tile(disp_idx, (1, 12)).ravel()
    vals_a = a_elem.ravel()
    rows_b = np.repeat(pres_idx, 3, axis=1).ravel()
    cols_b = np.tile(pres_idx, (1, 3)).ravel()
    vals_b = b_elem.ravel()
    vals_c = c_elem.ravel()
    rows_d = np.repeat(pres_idx, 12, axis=1).ravel()
    cols_d = np.tile(disp_idx, (1, 3)).ravel()
    vals_d = d_elem.ravel()

    # volumetric loads
    f_full = np.zeros(dofmap.n_disp_full)
    g_full = np.zeros(dofmap.n_pres_full)
    if f_vol is not None:
        qp_phys = _quad_points_phys(mesh)     # (nt, nq, 2)
        fv = np.array([[f_vol(x, y) for x, y in tri] for tri in qp_phys])  # (nt, nq, 2)
        contrib = area[:, None, None] * np.einsum("q,qi,tqc->tic", TRI_QW, _P2_AT_QP, fv)
        np.add.at(f_full, 2 * nodes6, contrib[:, :, 0])
        np.add.at(f_full, 2 * nodes6 + 1, contrib[:, :, 1])
    if g_src is not None:
        qp_phys = _quad_points_phys(mesh)
        gv = np.array([[g_src(x, y) for x, y in tri] for tri in qp_phys])  # (nt, nq)
        contrib = area[:, None] * np.einsum("q,qi,tq->ti", TRI_QW, _P1_AT_QP, gv)
        np.add.at(g_full, tris, contrib)

    # boundary terms: Robin mass into B, Robin data and tractions into loads
    rows_rb, cols_rb, vals_rb = [], [], []
    edge_ids = mesh.edge_index()
    nv = mesh.n_vertices
    for v0, v1, marker in mesh.boundary_edges:
        pspec = bc.pressure[marker]
        dspec = bc.displacement[marker]
        pa, pb = mesh.vertices[v0], mesh.vertices[v1]
        length = float(np.linalg.norm(pb - pa))
        if pspec[0] == "robin":
            c_rob, p_ext = float(pspec[1]), float(pspec[2])
            em = c_rob * length * np.einsum("q,qi,qj->ij", EDGE_QW, _EDGE_P1, _EDGE_P1)
            for li, gi in enumerate((v0, v1)):
                for lj, gj in enumerate((v0, v1)):
                    rows_rb.append(gi)
                    cols_rb.append(gj)
                    vals_rb.append(em[li, lj])
                g_full[gi] += c_rob * p_ext * length * float(EDGE_QW @ _EDGE_P1[:, li])
        if dspec[0] == "traction":
            fn = dspec[1]
            tangent = (pb - pa) / length
            normal = np.array([tangent[1], -tangent[0]])
            mid = nv + edge_ids[tuple(sorted((v0, v1)))]
            tr_nodes = (v0, v1, mid)
            for q, s in enumerate(EDGE_QP):
                x, y = pa + s * (pb - pa)
                tx, ty = fn(x, y, normal[0], normal[1])
                for li, node in enumerate(tr_nodes):
                    w = EDGE_QW[q] * _EDGE_P2[q, li] * length
                    f_full[2 * node] += w * tx
                    f_full[2 * node + 1] += w * ty

    if rows_rb:
        rows_b = np.concatenate([rows_b, np.asarray(rows_rb, dtype=np.int64)])
        cols_b = np.concatenate([cols_b, np.asarray(cols_rb, dtype=np.int64)])
        vals_b = np.concatenate([vals_b, np.asarray(vals_rb)])

    # reduce: keep free-free blocks, lift constrained values into the loads
    du, dp = dofmap.disp_free_map, dofmap.pres_free_map
    ubar, pbar = dofmap.disp_values, dofmap.pres_values

    A, lift_a = _reduce(rows_a, cols_a, vals_a, du, du, ubar, dofmap.n_u, dofmap.n_u)
    B, lift_b = _reduce(rows_b, cols_b, vals_b, dp, dp, pbar, dofmap.n_p, dofmap.n_p)
    C, _ = _reduce(rows_c_like(pres_idx), cols_c_like(pres_idx), vals_c, dp, dp,
                   np.zeros_like(pbar), dofmap.n_p, dofmap.n_p)
    D, _ = _reduce(rows_d, cols_d, vals_d, dp, du, np.zeros_like(ubar),
                   dofmap.n_p, dofmap.n_u)
    # coupling lift: constrained pressures act on the mechanics row via +D^T pbar
    mask_dc = (dp[rows_d] < 0) & (du[cols_d] >= 0)
    dt_lift = np.zeros(dofmap.n_u)
    np.add.at(dt_lift, du[cols_d[mask_dc]], vals_d[mask_dc] * pbar[rows_d[mask_dc]])

    f_red = f_full[dofmap.disp_free] + lift_a + dt_lift
    g_red = g_full[dofmap.pres_free] + lift_b

    A = SparseMatrix(A.n_rows, A.n_cols, A.row_offsets, A.col_indices, A.values, True)
    B = SparseMatrix(B.n_rows, B.n_cols, B.row_offsets, B.col_indices, B.values, True)
    C = SparseMatrix(C.n_rows, C.n_cols, C.row_offsets, C.col_indices, C.values, True)
    return PoroSystem(
        A=A, B=B, C=C, D=D,
        f=constant_load(f_red), g=constant_load(g_red),
        u0=np.zeros(dofmap.n_u), p0=np.zeros(dofmap.n_p),
        dofmap=dofmap)


def rows_c_like(pres_idx):
    return np.repeat(pres_idx, 3, axis=1).ravel()


def cols_c_like(pres_idx):
    return np.tile(pres_idx, (1, 3)).ravel()


def _reduce(rows, cols, vals, row_map, col_map, col_values, n_rows, n_cols):
    """Split COO entries into the free-free reduced matrix and the lifting
    vector -M_fc * values_c carried to the right-hand side."""
    rr = row_map[rows]
    cc = col_map[cols]
    keep = (rr >= 0) & (cc >= 0)
    mat = SparseMatrix.from_coo(n_rows, n_cols, rr[keep], cc[keep], vals[keep])
    lift = np.zeros(n_rows)
    mask = (rr >= 0) & (cc < 0)
    np.add.at(lift, rr[mask], -vals[mask] * col_values[cols[mask]])
    return mat, lift


def _quad_points_phys(mesh: TriMesh):
    v = mesh.vertices
    t = mesh.triangles
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    lam = _TRI_BARY  # (nq, 3)
    return (lam[None, :, 0, None] * p0[:, None, :]
            + lam[None, :, 1, None] * p1[:, None, :]
            + lam[None, :, 2, None] * p2[:, None, :])


def source_vector(dofmap: DofMap, g_src) -> np.ndarray:
    """Reduced load vector for a scalar source; g_src(x, y) -> 1/s value."""
    mesh = dofmap.mesh
    _, area = _geometry(mesh)
    qp_phys = _quad_points_phys(mesh)
    gv = np.array([[g_src(x, y) for x, y in tri] for tri in qp_phys])
    contrib = area[:, None] * np.einsum("q,qi,tq->ti", TRI_QW, _P1_AT_QP, gv)
    g_full = np.zeros(dofmap.n_pres_full)
    np.add.at(g_full, mesh.triangles, contrib)
    return g_full[dofmap.pres_free]


# ---------------------------------------------------------------------------
# Stationary start and manufactured solutions
# ---------------------------------------------------------------------------

def neutral_state(sys: PoroSystem, bc: BoundarySpec | None = None):
    """Stationary (u0, p0) under boundary data only.

    Solves the pure Darcy equilibrium for the pressure, then elasticity with
    the pressure-gradient load; the pair satisfies the initial-data
    consistency condition by construction.
    """
    if bc is not None:
        has_anchor = any(spec[0] in ("dirichlet", "robin") for spec in bc.pressure.values())
        if not has_anchor:
            raise ValueError("stationary pressure needs a Dirichlet or Robin condition")
    try:
        darcy = DirectSolver(sys.B)
    except RuntimeError as exc:
        raise ValueError(f"stationary pressure system is singular: {exc}") from exc
    p0 = darcy.solve(sys.g(0.0))
    u0 = sys.solver_A().solve(sys.f(0.0) + sys.Dt.matvec(p0))
    return u0, p0


def solve_static(sys: PoroSystem):
    """Triangular solve of the static coupled problem (flow, then mechanics)."""
    p = DirectSolver(sys.B).solve(sys.g(0.0))
    u = sys.solver_A().solve(sys.f(0.0) + sys.Dt.matvec(p))
    return u, p


def h1_errors(dofmap: DofMap, u_full, p_full, grad_u_exact, grad_p_exact):
    """H1-seminorm errors of expanded fields against exact gradient callables."""
    mesh = dofmap.mesh
    invjt, area = _geometry(mesh)
    grad2 = _p2_phys_grad(invjt)
    grad1 = np.einsum("tdr,ir->tid", invjt, _P1_GRAD_REF)
    nodes6 = _tri_nodes(mesh)
    qp_phys = _quad_points_phys(mesh)

    ux = u_full[2 * nodes6]               # (nt, 6)
    uy = u_full[2 * nodes6 + 1]
    gux = np.einsum("tqid,ti->tqd", grad2, ux)   # (nt, nq, 2)
    guy = np.einsum("tqid,ti->tqd", grad2, uy)
    pv = p_full[mesh.triangles]
    gp = np.einsum("tid,ti->td", grad1, pv)      # constant per triangle

    err_u = 0.0
    err_p = 0.0
    for tri in range(mesh.n_triangles):
        for q in range(len(TRI_QW)):
            x, y = qp_phys[tri, q]
            gexact = np.asarray(grad_u_exact(x, y))     # (2, 2); rows = components
            diff = np.stack([gux[tri, q], guy[tri, q]]) - gexact
            err_u += TRI_QW[q] * area[tri] * float(np.sum(diff * diff))
            dp = gp[tri] - np.asarray(grad_p_exact(x, y))
            err_p += TRI_QW[q] * area[tri] * float(dp @ dp)
    return math.sqrt(err_u), math.sqrt(err_p)


def manufactured_error(meshes, exact: dict, params: MaterialParams):
    """Static coupled solves against a manufactured solution.

    exact supplies callables: u, p, grad_u (rows du_i/dx_j), grad_p, f, g
    with loads derived offline from the strong form. Returns a list of
    (h, err_u, err_p) records and the observed orders between levels.
    """
    records = []
    for mesh in meshes:
        bc = BoundarySpec(
            displacement={m: ("dirichlet", exact["u"]) for m in {mk for _, _, mk in mesh.boundary_edges}},
            pressure={m: ("dirichlet", exact["p"]) for m in {mk for _, _, mk in mesh.boundary_edges}},
        )
        sys_ = assemble(mesh, params, bc, f_vol=exact["f"], g_src=exact["g"])
        u_red, p_red = solve_static(sys_)
        dofmap = sys_.dofmap
        eu, ep = h1_errors(dofmap, dofmap.expand_u(u_red), dofmap.expand_p(p_red),
                           exact["grad_u"], exact["grad_p"])
        h = float(np.sqrt(2.0 * np.max(mesh.areas())))
        records.append((h, eu, ep))
    orders_u = []
    orders_p = []
    for (h1, eu1, ep1), (h2, eu2, ep2) in zip(records, records[1:]):
        orders_u.append(math.log(eu1 / eu2) / math.log(h1 / h2))
        orders_p.append(math.log(ep1 / ep2) / math.log(h1 / h2))
    return records, orders_u, orders_p


def pressure_range_check(dofmap: DofMap, p_red, lo, hi, slack=1e-9):
    """Soft maximum-principle check; warns instead of failing on meshes
    without the Delaunay property."""
    p_full = dofmap.expand_p(p_red)
    pmin, pmax = float(p_full.min()), float(p_full.max())
    ok = lo - slack <= pmin and pmax <= hi + slack
    if not ok and not is_delaunay(dofmap.mesh):
        warnings.warn("pressure leaves the boundary-data range on a non-Delaunay mesh")
    return ok, pmin, pmax


# ---------------------------------------------------------------------------
# Mesh text format: "nv nt nb" header, vertex lines, triangle lines,
# marked boundary-edge lines
# ---------------------------------------------------------------------------

def save_mesh(mesh: TriMesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        for a, b, m in mesh.boundary_edges:
            fh.write(f"{a} {b} {m}\n")


def load_mesh(path) -> TriMesh:
    with open(path, encoding="utf-8") as fh:
        nv, nt, nb = (int(s) for s in fh.readline().split())
        vertices = np.array([[float(s) for s in fh.readline().split()] for _ in range(nv)])
        triangles = np.array([[int(s) for s in fh.readline().split()] for _ in range(nt)],
                             dtype=np.int64)
        boundary = []
        for _ in range(nb):
            a, b, m = fh.readline().split()
            boundary.append((int(a), int(b), m))
    return TriMesh(vertices, triangles, boundary).validate()
