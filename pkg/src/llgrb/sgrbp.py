"""Sparse grid interpolation of reduced basis coefficients of high-fidelity trajectories."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .fem import GramSet, TriMesh
from .fields import NoiseModel
from .pod import ReducedBasis
from .sparse_grid import SparseGridOp
from .tps import SolverError, TpsConfig, tps_run

__all__ = ["SgRbpSurrogate", "sgrbp_build", "sgrbp_eval", "sample_grid"]


@dataclass
class SgRbpSurrogate:
    grid_op: SparseGridOp
    phi: np.ndarray  # (3N, K) magnetization basis
    node_coeffs: np.ndarray  # (n_nodes, N_T + 1, K)
    times: np.ndarray

    @property
    def K(self) -> int:
        return self.phi.shape[1]

    def coefficients(self, y) -> np.ndarray:
        """Interpolated ``(N_T + 1, K)`` coefficient trajectory at ``y``."""
        return np.tensordot(self.grid_op.lagrange_weights(y), self.node_coeffs, axes=(0, 0))

    def save(self, directory) -> None:
        d = Path(directory)
        self.grid_op.save(d / "grid")
        io.write_matrix_csv(d / "basis.csv", self.phi.T, prefix="dof")
        io.write_rows_csv(d / "times.csv", ["step", "t"], list(enumerate(self.times)))
        for j, c in enumerate(self.node_coeffs):
            io.write_matrix_csv(d / "nodes" / f"node_{j:05d}.csv", c, prefix="k")

    @classmethod
    def load(cls, directory) -> "SgRbpSurrogate":
        d = Path(directory)
        op = SparseGridOp.load(d / "grid")
        phi = io.read_matrix_csv(d / "basis.csv").T
        times = np.array([float(r["t"]) for r in io.read_rows_csv(d / "times.csv")])
        coeffs = np.stack([io.read_matrix_csv(d / "nodes" / f"node_{j:05d}.csv") for j in range(op.n_nodes)])
        return cls(op, phi, coeffs, times)


def sample_grid(
    mesh: TriMesh,
    grams: GramSet,
    noise: NoiseModel,
    m0,
    cfg: TpsConfig,
    grid_op: SparseGridOp,
    cache: Optional[dict] = None,
) -> list:
    """Normalized high-fidelity trajectories (``m_hat`` arrays) at every sparse grid node.

    ``cache`` maps node keys to trajectories and is filled in place, so nested
    grids only solve at new nodes.
    """
    cache = {} if cache is None else cache
    out = []
    for key, y in zip(grid_op.node_keys, grid_op.nodes):
        if key not in cache:
            try:
                cache[key] = tps_run(mesh, grams, noise, m0, y, cfg).m_hat
            except SolverError as exc:
                raise SolverError(f"sparse grid node {tuple(y)}: {exc}") from exc
        out.append(cache[key])
    return out


def sgrbp_build(
    mesh: TriMesh,
    grams: GramSet,
    noise: NoiseModel,
    m0,
    cfg: TpsConfig,
    m_basis: ReducedBasis,
    grid_op: SparseGridOp,
    cache: Optional[dict] = None,
) -> SgRbpSurrogate:
    """Solve at every grid node and store the projected coefficients ``phi^T Q m_hat^n``."""
    trajs = sample_grid(mesh, grams, noise, m0, cfg, grid_op, cache)
    PtQ = (m_basis.gram @ m_basis.phi).T
    coeffs = np.stack([tr @ PtQ.T for tr in trajs])
    return SgRbpSurrogate(grid_op, m_basis.phi, coeffs, cfg.times)


def sgrbp_eval(surrogate: SgRbpSurrogate, y_query) -> np.ndarray:
    """Surrogate magnetizations ``(N_T + 1, 3N)``; no normalization, no PDE solve."""
    return surrogate.coefficients(y_query) @ surrogate.phi.T
