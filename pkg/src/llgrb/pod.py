"""Gram-weighted proper orthogonal decomposition of snapshot trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from . import io

__all__ = [
    "SnapshotSet",
    "ReducedBasis",
    "snapshots_from_trajectories",
    "pod_compute",
    "truncation_rank",
    "truncate",
    "project",
    "projection_error",
    "QUANTITIES",
]

# quantity -> (trajectory attribute, gram attribute)
QUANTITIES = {"m": ("m_hat", "q_vec"), "v": ("v", "q_vec"), "lambda": ("lam", "mass_scalar")}

RANK_CUTOFF = 1e-12


def _dense(q):
    return q.toarray() if sp.issparse(q) else np.asarray(q)


@dataclass
class SnapshotSet:
    """Snapshots as columns of ``data``; ``labels[k] = (sample, step)`` for column ``k``."""

    data: np.ndarray
    gram: object
    labels: list = field(default_factory=list)

    @property
    def n_columns(self) -> int:
        return self.data.shape[1]


@dataclass
class ReducedBasis:
    """Gram-orthonormal basis ``phi`` (columns) with the full list of POD singular values."""

    phi: np.ndarray
    singular_values: np.ndarray
    gram: object = field(repr=False)
    quantity: str = ""

    @property
    def J(self) -> int:
        return self.phi.shape[1]

    @property
    def rank(self) -> int:
        return int(np.sum(self.singular_values > RANK_CUTOFF * self.singular_values[0]))

    def take(self, J: int) -> "ReducedBasis":
        if J > self.J:
            raise ValueError(f"requested dimension {J} exceeds available {self.J}")
        return replace(self, phi=self.phi[:, :J])

    def orthonormality_defect(self) -> float:
        G = self.phi.T @ (self.gram @ self.phi)
        return float(np.max(np.abs(G - np.eye(self.J)))) if self.J else 0.0

    def save(self, directory, meta: Optional[dict] = None) -> None:
        d = Path(directory)
        io.write_rows_csv(
            d / "singular_values.csv",
            ["index", "sigma"],
            [(j + 1, s) for j, s in enumerate(self.singular_values)],
        )
        io.write_matrix_csv(d / "basis.csv", self.phi.T, prefix="dof")
        io.write_json(d / "meta.json", {"quantity": self.quantity, "J": self.J, **(meta or {})})

    @classmethod
    def load(cls, directory, gram) -> "ReducedBasis":
        d = Path(directory)
        sv = np.array([float(r["sigma"]) for r in io.read_rows_csv(d / "singular_values.csv")])
        phi = io.read_matrix_csv(d / "basis.csv").T
        meta = io.read_json(d / "meta.json")
        return cls(phi, sv, gram, meta.get("quantity", ""))


def snapshots_from_trajectories(trajectories: Sequence, grams, quantity: str) -> SnapshotSet:
    """Stack one quantity (``m``, ``v`` or ``lambda``) of all trajectories column-wise.

    Magnetization snapshots are the normalized states at steps ``0..N_T``; velocity
    and multiplier snapshots are the ``N_T`` step solutions.
    """
    attr, gram_attr = QUANTITIES[quantity]
    blocks, labels = [], []
    for s, tr in enumerate(trajectories):
        rows = getattr(tr, attr)
        blocks.append(rows.T)
        labels += [(s, n) for n in range(len(rows))]
    return SnapshotSet(np.hstack(blocks), getattr(grams, gram_attr), labels)


def _cholesky_upper(gram) -> np.ndarray:
    try:
        return la.cholesky(_dense(gram), lower=False)
    except la.LinAlgError as exc:
        raise ValueError(f"Gram matrix is not positive definite: {exc}") from exc


def pod_compute(snapshots: SnapshotSet, quantity: str = "") -> ReducedBasis:
    """POD of the snapshots in the inner product of ``snapshots.gram``.

    With ``Q = R^T R`` the SVD of ``R S / sqrt(N)`` gives ``U``; the basis is
    ``R^{-1} U`` restricted to singular values above the rank cutoff.
    """
    data = np.asarray(snapshots.data, dtype=float)
    if data.size == 0:
        raise ValueError("empty snapshot set")
    R = _cholesky_upper(snapshots.gram)
    scaled = (R @ data) / np.sqrt(data.shape[1])
    U, sv, _ = la.svd(scaled, full_matrices=False, lapack_driver="gesdd")
    if sv[0] == 0.0:
        raise ValueError("all snapshots vanish")
    r = int(np.sum(sv > RANK_CUTOFF * sv[0]))
    phi = la.solve_triangular(R, U[:, :r], lower=False)
    return ReducedBasis(phi, sv, snapshots.gram, quantity)


def truncation_rank(singular_values, eps_pod_sq: float) -> int:
    """Smallest ``J`` capturing a fraction ``1 - eps_pod_sq`` of the squared singular values."""
    if not 0.0 < eps_pod_sq < 1.0:
        raise ValueError(f"eps_pod_sq must lie in (0, 1), got {eps_pod_sq}")
    s2 = np.asarray(singular_values, dtype=float) ** 2
    total = s2.sum()
    if total == 0.0:
        raise ValueError("all singular values are zero")
    ratio = np.cumsum(s2) / total
    # guard against round-off when the criterion is met exactly
    return int(np.argmax(ratio >= (1.0 - eps_pod_sq) * (1 - 1e-14))) + 1


def truncate(basis: ReducedBasis, eps_pod_sq: float) -> ReducedBasis:
    J = truncation_rank(basis.singular_values, eps_pod_sq)
    return basis.take(min(J, basis.J))


def project(basis: ReducedBasis, w: np.ndarray):
    """Coefficients ``phi^T Q w`` and the reconstruction ``phi c``; ``w`` may hold columns."""
    coeffs = basis.phi.T @ (basis.gram @ w)
    return coeffs, basis.phi @ coeffs


def projection_error(basis: ReducedBasis, test_trajectories: Sequence, quantity: str) -> float:
    """Root mean square (over samples and stored steps) projection error in the Gram norm."""
    if not test_trajectories:
        raise ValueError("empty test set")
    attr, _ = QUANTITIES[quantity]
    total, count = 0.0, 0
    for tr in test_trajectories:
        W = getattr(tr, attr).T
        _, rec = project(basis, W)
        D = W - rec
        total += float(np.sum(D * (basis.gram @ D)))
        count += W.shape[1]
    return float(np.sqrt(max(total, 0.0) / count))
