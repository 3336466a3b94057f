"""High-fidelity tangent plane scheme with the constraint imposed through Lagrange multipliers."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import io
from .fem import (
    GramSet,
    TriMesh,
    assemble_constraint,
    l2_project,
    nodal_modulus,
    normalize_nodewise,
)
from .fields import NoiseModel, assemble_load, get_assembler
from .noise import BrownianPath, brownian_eval

__all__ = [
    "SolverError",
    "TpsConfig",
    "Trajectory",
    "tps_step",
    "tps_run",
    "infsup_constant",
    "noise_values",
]


class SolverError(RuntimeError):
    """A linear solve failed or returned an unusable solution."""


@dataclass(frozen=True)
class TpsConfig:
    alpha: float = 1.4
    T: float = 0.5
    tau: float = 1e-3
    normalize: bool = True

    def __post_init__(self):
        if self.alpha <= 0 or self.tau <= 0:
            raise ValueError("alpha and tau must be positive")
        if self.T < self.tau * (1 - 1e-9):
            raise ValueError("final time must be at least one time step")
        n = self.T / self.tau
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"T / tau = {n} is not an integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.tau))

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)


@dataclass
class Trajectory:
    """Time series of one high-fidelity run; row ``n`` is time step ``n``."""

    m: np.ndarray  # (N_T+1, 3N) updates m^n (m^0 = L2 projection of the initial condition)
    m_hat: np.ndarray  # (N_T+1, 3N) states used to linearize (normalized if enabled)
    v: np.ndarray  # (N_T, 3N)
    lam: np.ndarray  # (N_T, N)
    times: np.ndarray
    infsup: Optional[np.ndarray] = None

    @property
    def magnetizations(self) -> np.ndarray:
        return self.m_hat

    @property
    def n_steps(self) -> int:
        return len(self.v)

    def save(self, directory, meta: Optional[dict] = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        io.write_matrix_csv(d / "m.csv", self.m)
        io.write_matrix_csv(d / "m_hat.csv", self.m_hat)
        io.write_matrix_csv(d / "v.csv", self.v)
        io.write_matrix_csv(d / "lambda.csv", self.lam)
        rows = [(n, t) for n, t in enumerate(self.times)]
        if self.infsup is not None:
            rows = [(n, t, self.infsup[n] if n < len(self.infsup) else "") for n, t in rows]
            io.write_rows_csv(d / "times.csv", ["step", "t", "infsup"], rows)
        else:
            io.write_rows_csv(d / "times.csv", ["step", "t"], rows)
        io.write_json(d / "meta.json", meta or {})

    @classmethod
    def load(cls, directory) -> "Trajectory":
        d = Path(directory)
        rows = io.read_rows_csv(d / "times.csv")
        times = np.array([float(r["t"]) for r in rows])
        infsup = None
        if rows and "infsup" in rows[0]:
            infsup = np.array([float(r["infsup"]) for r in rows[:-1]])
        return cls(
            io.read_matrix_csv(d / "m.csv"),
            io.read_matrix_csv(d / "m_hat.csv"),
            io.read_matrix_csv(d / "v.csv"),
            io.read_matrix_csv(d / "lambda.csv"),
            times,
            infsup,
        )


def noise_values(y, cfg: TpsConfig) -> np.ndarray:
    """Brownian path ``W(y, t_n)`` at every time step of ``cfg``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not np.any(y):
        return np.zeros(cfg.n_steps + 1)
    return np.asarray(brownian_eval(BrownianPath(y, cfg.T), cfg.times))


def _solve_saddle(K: sp.csc_matrix, f: np.ndarray, step: int):
    n = len(f)
    rhs = np.concatenate([f, np.zeros(K.shape[0] - n)])
    try:
        x = spla.splu(K).solve(rhs)
    except RuntimeError as exc:  # exactly singular factor
        raise SolverError(f"step {step}: saddle point matrix is singular ({exc})") from exc
    res = np.linalg.norm(K @ x - rhs)
    scale = np.linalg.norm(rhs) + abs(K).max() * np.linalg.norm(x)
    if not np.all(np.isfinite(x)) or res > 1e-9 * max(scale, 1e-300):
        raise SolverError(
            f"step {step}: saddle point solve inaccurate, relative residual {res / max(scale, 1e-300):.2e}"
        )
    return x[:n], x[n:]


def tps_step(
    mesh: TriMesh,
    grams: GramSet,
    noise: NoiseModel,
    m_hat: np.ndarray,
    W_val: float,
    t: float,
    cfg: TpsConfig,
    step: int = 0,
):
    """Velocity and multiplier of one step linearized at ``m_hat``."""
    K = get_assembler(mesh, grams).saddle(m_hat, cfg.alpha, cfg.tau)
    f = assemble_load(mesh, grams, noise, m_hat, W_val, t)
    return _solve_saddle(K, f, step)


def tps_run(
    mesh: TriMesh,
    grams: GramSet,
    noise: NoiseModel,
    m0,
    y,
    cfg: TpsConfig,
    infsup: bool = False,
) -> Trajectory:
    """Run the tangent plane scheme from the pointwise initial condition ``m0``.

    ``m0`` is either a callable on (N, 2) coordinates or a ready coefficient vector.
    """
    m_init = m0 if isinstance(m0, np.ndarray) else l2_project(mesh, grams, m0)
    if np.any(nodal_modulus(m_init) == 0.0):
        raise ValueError("initial condition vanishes at a mesh node")
    nt, n = cfg.n_steps, mesh.n_nodes
    W = noise_values(y, cfg)
    m = np.empty((nt + 1, 3 * n))
    m_hat = np.empty((nt + 1, 3 * n))
    v = np.empty((nt, 3 * n))
    lam = np.empty((nt, n))
    beta = np.empty(nt) if infsup else None
    m[0] = m_init
    m_hat[0] = normalize_nodewise(m_init) if cfg.normalize else m_init
    for k in range(nt):
        t = k * cfg.tau
        v[k], lam[k] = tps_step(mesh, grams, noise, m_hat[k], W[k], t, cfg, step=k)
        if infsup:
            beta[k] = infsup_constant(mesh, grams, m_hat[k])
        m[k + 1] = m_hat[k] + cfg.tau * v[k]
        m_hat[k + 1] = normalize_nodewise(m[k + 1]) if cfg.normalize else m[k + 1]
    return Trajectory(m, m_hat, v, lam, cfg.times, beta)


def infsup_constant(mesh: TriMesh, grams: GramSet, m_hat: np.ndarray) -> float:
    """Discrete inf-sup constant of ``(lam, v) -> <lam, v . m_hat>``.

    Primal space normed in H^1, multipliers in L^2: the square root of the
    smallest eigenvalue of ``B Q^{-1} B^T`` relative to the scalar mass matrix.
    """
    B = assemble_constraint(mesh, m_hat)
    if B.nnz == 0 or not np.any(B.data):
        return 0.0
    n = mesh.n_nodes
    if n <= 2000:
        QinvBt = grams.solve_q(B.T.toarray())
        S = B @ QinvBt
        S = 0.5 * (S + S.T)
        try:
            lam_min = la.eigh(
                S, grams.mass_scalar.toarray(), eigvals_only=True, subset_by_index=[0, 0]
            )[0]
        except la.LinAlgError as exc:
            raise SolverError(f"inf-sup eigensolve failed: {exc}") from exc
    else:
        op = spla.LinearOperator((n, n), matvec=lambda x: B @ grams.solve_q(B.T @ x), dtype=float)
        rng = np.random.default_rng(0)
        vals, _ = spla.lobpcg(op, rng.standard_normal((n, 4)), B=grams.mass_scalar, largest=False, tol=1e-10, maxiter=2000)
        lam_min = float(np.min(vals))
    return float(np.sqrt(max(lam_min, 0.0)))
