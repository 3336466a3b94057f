"""Noise rotation ``e^{WG}``, the tangent-plane system matrix and the load vector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .fem import GramSet, TriMesh, as_blocks, from_blocks, weighted_mass

__all__ = [
    "NoiseModel",
    "rot_exp",
    "rot_exp_nodal",
    "cross_matrix",
    "assemble_system_matrix",
    "assemble_load",
    "SaddleAssembler",
    "get_assembler",
]


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Spatial noise profile ``g`` (nodal, unit length) and optional external field.

    ``h_ext(t, xy)`` returns an ``(len(xy), 3)`` array; ``None`` means no field.
    """

    g: np.ndarray
    h_ext: Optional[Callable[[float, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        mod = np.linalg.norm(g.reshape(3, -1), axis=0)
        if np.max(np.abs(mod - 1.0)) > 1e-10:
            raise ValueError("noise profile g must have unit modulus at every node")
        object.__setattr__(self, "g", g)

    @property
    def g_nodes(self) -> np.ndarray:
        return as_blocks(self.g)


def rot_exp(W: float, g, phi):
    """``phi + sin(W) G phi + (1 - cos W) G^2 phi`` with ``G u = u x g``."""
    g = np.asarray(g, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(np.abs(np.linalg.norm(g, axis=-1) - 1.0) > 1e-8):
        raise ValueError("rotation axis g must be a unit vector")
    return _rotate(W, g, phi)


def _rotate(W, g, phi):
    gphi = np.cross(phi, g)
    return phi + np.sin(W) * gphi + (1.0 - np.cos(W)) * np.cross(gphi, g)


def rot_exp_nodal(W: float, noise: NoiseModel, u: np.ndarray) -> np.ndarray:
    """Apply ``e^{WG}`` node by node to a 3N coefficient vector."""
    return from_blocks(_rotate(W, noise.g_nodes, as_blocks(u)))


def cross_matrix(mesh: TriMesh, m: np.ndarray) -> sp.csr_matrix:
    """Matrix of ``(v, phi) -> <m x v, phi>`` (skew-symmetric)."""
    cx, cy, cz = (weighted_mass(mesh, c) for c in m.reshape(3, -1))
    return sp.bmat([[None, -cz, cy], [cz, None, -cx], [-cy, cx, None]], format="csr")


def assemble_system_matrix(
    mesh: TriMesh, grams: GramSet, m_hat: np.ndarray, alpha: float, tau: float
) -> sp.csr_matrix:
    """``alpha <v, phi> + <m_hat x v, phi> + tau <grad v, grad phi>``."""
    return (alpha * grams.mass_vec + tau * grams.stiff_vec + cross_matrix(mesh, m_hat)).tocsr()


def assemble_load(
    mesh: TriMesh, grams: GramSet, noise: NoiseModel, m_hat: np.ndarray, W_val: float, t: float
) -> np.ndarray:
    """Right-hand side of one tangent-plane step.

    Entry ``i`` is ``-<grad I(e^{WG} m), grad I(e^{WG} phi_i)> + <I(e^{-WG} H(t)), phi_i>``
    with nodal interpolation ``I``; the exchange term of the trilinear form has
    already been cancelled against the one in the noise term.
    """
    rotated = rot_exp_nodal(W_val, noise, m_hat)
    f = -rot_exp_nodal(-W_val, noise, grams.stiff_vec @ rotated)
    if noise.h_ext is not None:
        h = from_blocks(np.broadcast_to(noise.h_ext(t, mesh.nodes), (mesh.n_nodes, 3)))
        f += grams.mass_vec @ rot_exp_nodal(-W_val, noise, h)
    return f


class _AffinePattern:
    """Sparse matrix whose stored entries are ``sum_k w_k S_k + L @ m`` on a fixed pattern."""

    def __init__(self, shape, rows, cols, lin, static):
        n_rows, n_cols = shape
        keys = cols.astype(np.int64) * n_rows + rows
        uniq, inv = np.unique(keys, return_inverse=True)
        n_ent = len(keys)
        gather = sp.csr_matrix((np.ones(n_ent), (inv, np.arange(n_ent))), shape=(len(uniq), n_ent))
        self.shape = shape
        self.indices = (uniq % n_rows).astype(np.int32)
        self.indptr = np.concatenate(
            [[0], np.cumsum(np.bincount(uniq // n_rows, minlength=n_cols))]
        ).astype(np.int32)
        self.lin = (gather @ lin).tocsr()
        self.static = {k: gather @ v for k, v in static.items()}

    def __call__(self, m, **weights) -> sp.csc_matrix:
        data = self.lin @ m
        for k, w in weights.items():
            data = data + w * self.static[k]
        return sp.csc_matrix((data, self.indices, self.indptr), shape=self.shape)


class SaddleAssembler:
    """Fast assembly of the tangent-plane blocks for a fixed mesh.

    Every block depends affinely on the linearization state, so each call is a
    single sparse mat-vec onto a precomputed CSC pattern.
    """

    def __init__(self, mesh: TriMesh, grams: GramSet):
        self.mesh, self.grams = mesh, grams
        n = mesh.n_nodes
        op, indices, indptr = mesh._weighted_mass_op
        c_rows = np.repeat(np.arange(n), np.diff(indptr))
        c_cols = indices
        nnz_c = len(c_cols)

        def comp(c, sign):
            return sp.csr_matrix((sign * op.data, op.indices + c * n, op.indptr), shape=(nnz_c, 3 * n))

        mass = grams.mass_scalar.tocoo()
        stiff = grams.stiff_scalar.tocoo()
        # cross-product blocks (row block, col block, component, sign)
        cross = [(0, 1, 2, -1), (0, 2, 1, 1), (1, 0, 2, 1), (1, 2, 0, -1), (2, 0, 1, -1), (2, 1, 0, 1)]

        def build(blocks_lin, with_diag, shape):
            rows, cols, lins, s_m, s_k = [], [], [], [], []
            for bi, bj, c in blocks_lin:
                rows.append(c_rows + bi * n)
                cols.append(c_cols + bj * n)
                lins.append(c)
                s_m.append(np.zeros(nnz_c))
                s_k.append(np.zeros(nnz_c))
            if with_diag:
                zero_m = sp.csr_matrix((mass.nnz, 3 * n))
                zero_k = sp.csr_matrix((stiff.nnz, 3 * n))
                for a in range(3):
                    rows += [mass.row + a * n, stiff.row + a * n]
                    cols += [mass.col + a * n, stiff.col + a * n]
                    lins += [zero_m, zero_k]
                    s_m += [mass.data, np.zeros(stiff.nnz)]
                    s_k += [np.zeros(mass.nnz), stiff.data]
            lin = sp.vstack(lins, format="csr")
            static = {"alpha": np.concatenate(s_m), "tau": np.concatenate(s_k)} if with_diag else {}
            return _AffinePattern(shape, np.concatenate(rows), np.concatenate(cols), lin, static)

        a_blocks = [(bi, bj, comp(c, s)) for bi, bj, c, s in cross]
        b_blocks = [(0, a, comp(a, 1)) for a in range(3)]
        bt_blocks = [(a, 3, comp(a, 1)) for a in range(3)]
        sad_blocks = a_blocks + [(3, a, comp(a, 1)) for a in range(3)] + bt_blocks
        self._A = build(a_blocks, True, (3 * n, 3 * n))
        self._B = build(b_blocks, False, (n, 3 * n))
        self._K = build(sad_blocks, True, (4 * n, 4 * n))

    def system_matrix(self, m_hat, alpha, tau) -> sp.csc_matrix:
        return self._A(m_hat, alpha=alpha, tau=tau)

    def constraint(self, m_hat) -> sp.csc_matrix:
        return self._B(m_hat)

    def saddle(self, m_hat, alpha, tau) -> sp.csc_matrix:
        return self._K(m_hat, alpha=alpha, tau=tau)


def get_assembler(mesh: TriMesh, grams: GramSet) -> SaddleAssembler:
    """Assembler cached on the Gram set (one per mesh)."""
    key = "saddle_assembler"
    if key not in grams._cache:
        grams._cache[key] = SaddleAssembler(mesh, grams)
    return grams._cache[key]
