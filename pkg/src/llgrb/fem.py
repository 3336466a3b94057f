"""P1 finite elements on structured triangulations of the unit square.

Vector fields are stored component-blocked: a vector field with ``N`` nodes is a
flat array of length ``3N`` holding all x-coefficients, then all y, then all z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "TriMesh",
    "GramSet",
    "QUAD_POINTS",
    "QUAD_WEIGHTS",
    "build_structured_mesh",
    "assemble_gram",
    "l2_project",
    "nodal_interpolate",
    "assemble_constraint",
    "weighted_mass",
    "as_blocks",
    "from_blocks",
    "normalize_nodewise",
    "nodal_modulus",
    "prolongate",
]

# Symmetric 6-point rule on the reference triangle, exact for degree 4.
# Barycentric coordinates; weights sum to one and get scaled by the area.
_A, _WA = 0.445948490915965, 0.223381589678011
_B, _WB = 0.091576213509771, 0.109951743655322
QUAD_POINTS = np.array(
    [
        [_A, _A, 1 - 2 * _A],
        [_A, 1 - 2 * _A, _A],
        [1 - 2 * _A, _A, _A],
        [_B, _B, 1 - 2 * _B],
        [_B, 1 - 2 * _B, _B],
        [1 - 2 * _B, _B, _B],
    ]
)
QUAD_WEIGHTS = np.array([_WA] * 3 + [_WB] * 3)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Structured triangulation of [0,1]^2 with ``2 n_div^2`` triangles."""

    n_div: int
    nodes: np.ndarray
    triangles: np.ndarray

    @property
    def h(self) -> float:
        return 1.0 / self.n_div

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def grads(self) -> np.ndarray:
        """Gradients of the three barycentric functions, shape (n_tri, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self.areas
        g = np.empty((len(self.triangles), 3, 2))
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            g[:, k, 0] = (y[:, i] - y[:, j]) / two_a
            g[:, k, 1] = (x[:, j] - x[:, i]) / two_a
        return g

    @cached_property
    def quad_xy(self) -> np.ndarray:
        """Physical quadrature points, shape (n_tri, n_quad, 2)."""
        return np.einsum("qk,tkd->tqd", QUAD_POINTS, self.nodes[self.triangles])

    @cached_property
    def _pattern(self):
        rows = np.repeat(self.triangles, 3, axis=1).ravel()
        cols = np.tile(self.triangles, (1, 3)).ravel()
        return rows, cols

    @cached_property
    def _weighted_mass_op(self):
        # data(csr of int w psi_p psi_q) = op @ w, for nodal weights w
        n, tri = self.n_nodes, self.triangles
        scaled = QUAD_WEIGHTS[:, None, None, None] * np.einsum(
            "qr,qp,qs->qrps", QUAD_POINTS, QUAD_POINTS, QUAD_POINTS
        )
        ref = scaled.sum(axis=0)  # (r, p, q) integral over unit-area triangle
        rows, cols = self._pattern
        template = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        template.sum_duplicates()
        template.sort_indices()
        # locate each (row, col) in the csr data array
        lookup = sp.csr_matrix(
            (np.arange(template.nnz) + 1, template.indices, template.indptr), shape=(n, n)
        )
        pos = np.asarray(lookup[rows, cols]).ravel() - 1
        ne = len(tri)
        # local entries: sum_r w[tri[e, r]] * area_e * ref[r, p, q]
        ent_pos = np.repeat(pos, 3)
        ent_node = np.broadcast_to(tri[:, None, None, :], (ne, 3, 3, 3)).reshape(-1)
        ent_val = (self.areas[:, None, None, None] * np.transpose(ref, (1, 2, 0))[None]).reshape(-1)
        op = sp.csr_matrix((ent_val, (ent_pos, ent_node)), shape=(template.nnz, n))
        return op, template.indices.copy(), template.indptr.copy()


def build_structured_mesh(n_div: int) -> TriMesh:
    """Uniform mesh; every cell is split along its lower-left to upper-right diagonal."""
    if int(n_div) != n_div or n_div < 1:
        raise ValueError(f"n_div must be a positive integer, got {n_div!r}")
    n_div = int(n_div)
    t = np.linspace(0.0, 1.0, n_div + 1)
    xx, yy = np.meshgrid(t, t)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(n_div), np.arange(n_div))
    a = (j * (n_div + 1) + i).ravel()
    b, c, d = a + 1, a + n_div + 2, a + n_div + 1
    triangles = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriMesh(n_div, nodes, triangles)


@dataclass(frozen=True, eq=False)
class GramSet:
    mass_scalar: sp.csr_matrix
    stiff_scalar: sp.csr_matrix
    mass_vec: sp.csr_matrix
    stiff_vec: sp.csr_matrix
    q_vec: sp.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def mass_lumped(self) -> np.ndarray:
        """Row sums of the scalar mass matrix, i.e. integrals of the hat functions."""
        if "lumped" not in self._cache:
            self._cache["lumped"] = np.asarray(self.mass_scalar.sum(axis=1)).ravel()
        return self._cache["lumped"]

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        if "mass_lu" not in self._cache:
            self._cache["mass_lu"] = spla.splu(self.mass_scalar.tocsc())
        return self._cache["mass_lu"].solve(rhs)

    def solve_q(self, rhs: np.ndarray) -> np.ndarray:
        """Apply the inverse of the H^1 Gram matrix (cached factorization)."""
        if "q_lu" not in self._cache:
            self._cache["q_lu"] = spla.splu(self.q_vec.tocsc())
        return self._cache["q_lu"].solve(rhs)


def _block3(m: sp.spmatrix) -> sp.csr_matrix:
    return sp.block_diag([m, m, m], format="csr")


def assemble_gram(mesh: TriMesh) -> GramSet:
    rows, cols = mesh._pattern
    ref_mass = (np.ones((3, 3)) + np.eye(3)) / 12.0  # exact P1 element mass / area
    mloc = mesh.areas[:, None, None] * ref_mass[None]
    kloc = mesh.areas[:, None, None] * np.einsum("tpd,tqd->tpq", mesh.grads, mesh.grads)
    n = mesh.n_nodes
    mass = sp.csr_matrix((mloc.ravel(), (rows, cols)), shape=(n, n))
    stiff = sp.csr_matrix((kloc.ravel(), (rows, cols)), shape=(n, n))
    mass_vec, stiff_vec = _block3(mass), _block3(stiff)
    return GramSet(mass, stiff, mass_vec, stiff_vec, (mass_vec + stiff_vec).tocsr())


def weighted_mass(mesh: TriMesh, w: np.ndarray) -> sp.csr_matrix:
    """Matrix of ``int_D w psi_p psi_q dx`` for a P1 weight ``w`` (exact)."""
    op, indices, indptr = mesh._weighted_mass_op
    n = mesh.n_nodes
    return sp.csr_matrix((op @ w, indices, indptr), shape=(n, n))


def as_blocks(u: np.ndarray) -> np.ndarray:
    """View a 3N coefficient vector as an (N, 3) array of nodal vectors."""
    return u.reshape(3, -1).T


def from_blocks(u: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(u.T).ravel()


def nodal_modulus(u: np.ndarray) -> np.ndarray:
    return np.linalg.norm(u.reshape(3, -1), axis=0)


def normalize_nodewise(u: np.ndarray) -> np.ndarray:
    mod = nodal_modulus(u)
    if np.any(mod == 0.0):
        raise ValueError("cannot normalize a field vanishing at a mesh node")
    return (u.reshape(3, -1) / mod).ravel()


def nodal_interpolate(mesh: TriMesh, f) -> np.ndarray:
    """Coefficients of the nodal interpolant of ``f: (N,2) -> (N,3)``."""
    vals = np.asarray(f(mesh.nodes), dtype=float)
    return from_blocks(np.broadcast_to(vals, (mesh.n_nodes, 3)))


def l2_project(mesh: TriMesh, grams: GramSet, f) -> np.ndarray:
    """L^2 projection onto the P1 vector space of a pointwise function D -> R^3."""
    xy = mesh.quad_xy.reshape(-1, 2)
    vals = np.broadcast_to(np.asarray(f(xy), dtype=float), (len(xy), 3))
    vals = vals.reshape(len(mesh.triangles), len(QUAD_WEIGHTS), 3)
    wq = QUAD_WEIGHTS[None, :] * mesh.areas[:, None]
    # load[tri[t, p], c] += sum_q wq[t,q] * lam_p(q) * f_c
    local = np.einsum("tq,qp,tqc->tpc", wq, QUAD_POINTS, vals)
    load = np.zeros((mesh.n_nodes, 3))
    np.add.at(load, mesh.triangles.ravel(), local.reshape(-1, 3))
    coeffs = grams.solve_mass(load)
    return from_blocks(coeffs)


def assemble_constraint(mesh: TriMesh, m: np.ndarray) -> sp.csr_matrix:
    """``B[i, j] = <phi_j . m, psi_i>`` as an (N, 3N) sparse matrix."""
    mx, my, mz = m.reshape(3, -1)
    return sp.hstack(
        [weighted_mass(mesh, mx), weighted_mass(mesh, my), weighted_mass(mesh, mz)], format="csr"
    )


def prolongate(coarse: TriMesh, fine: TriMesh, u: np.ndarray) -> np.ndarray:
    """Evaluate a coarse P1 field (scalar or vector) at the nodes of a nested finer mesh."""
    ratio = fine.n_div // coarse.n_div
    if ratio * coarse.n_div != fine.n_div:
        raise ValueError("meshes are not nested")
    ncomp = len(u) // coarse.n_nodes
    n = coarse.n_div
    xy = fine.nodes * n
    i = np.minimum(np.floor(xy[:, 0]).astype(int), n - 1)
    j = np.minimum(np.floor(xy[:, 1]).astype(int), n - 1)
    s, t = xy[:, 0] - i, xy[:, 1] - j
    a = j * (n + 1) + i
    b, c, d = a + 1, a + n + 2, a + n + 1
    lower = s >= t  # triangle (a, b, c); otherwise (a, c, d)
    comps = u.reshape(ncomp, -1)
    out = np.where(
        lower,
        comps[:, a] + s * (comps[:, b] - comps[:, a]) + t * (comps[:, c] - comps[:, b]),
        comps[:, a] + t * (comps[:, d] - comps[:, a]) + s * (comps[:, c] - comps[:, d]),
    )
    return out.ravel()
