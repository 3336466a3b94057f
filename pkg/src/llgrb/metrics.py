"""Error metrics, physical diagnostics and convergence-rate fits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import io
from .fem import GramSet, TriMesh, QUAD_POINTS, QUAD_WEIGHTS, as_blocks

__all__ = [
    "ErrorReport",
    "h1_norm",
    "h1_error",
    "trajectory_error",
    "galerkin_pod_error",
    "physical_diagnostics",
    "unit_modulus_error",
    "dirichlet_energy",
    "average_mz",
    "nodal_unit_defect",
    "rate_fit",
    "histogram",
    "HIST_EDGES",
    "write_metric_csv",
]

HIST_EDGES = np.round(np.linspace(-1.0, 1.0, 21), 12)


@dataclass
class ErrorReport:
    """Per-step mean squared errors and their RMS aggregate."""

    name: str
    per_step: np.ndarray  # mean over samples of squared error at each step
    n_samples: int
    norm: str = "H1"
    reduction: str = "rms"

    @property
    def aggregate(self) -> float:
        if self.reduction == "min":
            return float(np.min(self.per_step))
        return float(np.sqrt(np.mean(self.per_step)))


def h1_norm(grams: GramSet, u: np.ndarray) -> float:
    return float(np.sqrt(max(u @ (grams.q_vec @ u), 0.0)))


def h1_error(grams: GramSet, a: np.ndarray, b: np.ndarray) -> float:
    return h1_norm(grams, a - b)


def _sq_norms(gram, D: np.ndarray) -> np.ndarray:
    # row-wise squared Gram norms of a (steps, dofs) difference array
    return np.einsum("ij,ij->i", D, (gram @ D.T).T)


def trajectory_error(
    reference: Sequence[np.ndarray],
    approx: Sequence[np.ndarray],
    gram,
    name: str = "error",
    steps=None,
) -> ErrorReport:
    """RMS over samples and steps of the Gram-norm distance between paired trajectories.

    Each item is a ``(n_steps, n_dof)`` array; ``steps`` optionally selects rows of
    both (for instance to skip the initial state).
    """
    if len(reference) != len(approx) or not reference:
        raise ValueError("need matching, nonempty lists of trajectories")
    acc = None
    for r, a in zip(reference, approx):
        r, a = np.asarray(r), np.asarray(a)
        if r.shape != a.shape:
            raise ValueError(f"time grid mismatch: {r.shape} vs {a.shape}")
        D = r - a if steps is None else (r - a)[steps]
        e = _sq_norms(gram, D)
        acc = e if acc is None else acc + e
    return ErrorReport(name, acc / len(reference), len(reference))


def galerkin_pod_error(hf: Sequence, rom: Sequence, grams: GramSet, steps=None) -> float:
    """RMS H^1 distance between high-fidelity and reduced magnetizations.

    Both sides are compared through their normalized states ``m_hat``; by
    default all steps ``1..N_T`` are summed.
    """
    steps = slice(1, None) if steps is None else steps
    rep = trajectory_error(
        [h.m_hat for h in hf], [r.m_hat for r in rom], grams.q_vec, "galerkin_pod", steps
    )
    return rep.aggregate


def nodal_unit_defect(m: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.norm(as_blocks(m), axis=1) - 1.0)))


def unit_modulus_error(mesh: TriMesh, m: np.ndarray) -> float:
    """``int_D |1 - |m|^2| dx`` with ``m`` interpolated at the quadrature points."""
    mb = as_blocks(m)[mesh.triangles]  # (n_tri, 3, 3)
    vals = np.einsum("qa,tac->tqc", QUAD_POINTS, mb)
    integrand = np.abs(1.0 - np.sum(vals**2, axis=-1))
    return float(np.sum(mesh.areas[:, None] * QUAD_WEIGHTS[None, :] * integrand))


def dirichlet_energy(grams: GramSet, m: np.ndarray) -> float:
    """``sqrt(m^T K m)`` (the seminorm, as tracked in the experiments)."""
    return float(np.sqrt(max(m @ (grams.stiff_vec @ m), 0.0)))


def average_mz(grams: GramSet, m: np.ndarray) -> float:
    """``int_D m_z dx`` (the domain has unit area)."""
    n = grams.mass_scalar.shape[0]
    return float(grams.mass_lumped @ m[2 * n :])


def physical_diagnostics(mesh: TriMesh, grams: GramSet, m: np.ndarray):
    return unit_modulus_error(mesh, m), dirichlet_energy(grams, m), average_mz(grams, m)


def rate_fit(xs, errs) -> float:
    """Least-squares slope of ``log(err)`` against ``log(x)``."""
    xs, errs = np.asarray(xs, dtype=float), np.asarray(errs, dtype=float)
    if len(xs) != len(errs) or len(xs) < 2:
        raise ValueError("need at least two matching points")
    if np.any(xs <= 0) or np.any(errs <= 0) or not np.all(np.isfinite(errs)):
        raise ValueError("rate fit needs positive finite values")
    return float(np.polyfit(np.log(xs), np.log(errs), 1)[0])


def histogram(values) -> np.ndarray:
    """Counts on the fixed bins ``[-1, 1]`` in steps of 0.1 (values clipped to the range)."""
    v = np.clip(np.asarray(values, dtype=float), -1.0, 1.0)
    return np.histogram(v, bins=HIST_EDGES)[0]


def write_metric_csv(path, x_name: str, rows) -> None:
    """Rows of ``(x, metric, variant, value)`` in the long plot-data layout."""
    io.write_rows_csv(path, [x_name, "metric", "variant", "value"], rows)
